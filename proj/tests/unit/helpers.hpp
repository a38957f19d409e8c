#pragma once

#include "rerand/data_model.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace testutil {

inline Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline Eigen::MatrixXd columns(std::initializer_list<std::vector<double>> cols) {
  const auto n = static_cast<Eigen::Index>(cols.begin()->size());
  Eigen::MatrixXd X(n, static_cast<Eigen::Index>(cols.size()));
  Eigen::Index j = 0;
  for (const auto& c : cols) X.col(j++) = to_eigen(c);
  return X;
}

struct FrameBuilder {
  rerand::FrameColumns cols;

  FrameBuilder& y(const std::vector<double>& v) {
    cols.outcome = to_eigen(v);
    if (cols.observed.empty()) cols.observed.assign(v.size(), 1);
    return *this;
  }
  FrameBuilder& observed(const std::vector<int>& r) {
    cols.observed = r;
    return *this;
  }
  FrameBuilder& arms(const std::vector<int>& a) {
    cols.arms = a;
    return *this;
  }
  FrameBuilder& x(const std::string& name, const std::vector<double>& v) {
    const auto n = static_cast<Eigen::Index>(v.size());
    Eigen::MatrixXd X(n, cols.covariates.cols() + 1);
    if (cols.covariates.cols() > 0) X.leftCols(cols.covariates.cols()) = cols.covariates;
    X.col(X.cols() - 1) = to_eigen(v);
    cols.covariates = X;
    cols.covariate_names.push_back(name);
    return *this;
  }
  FrameBuilder& strata(const std::vector<int>& s) {
    cols.strata.clear();
    for (int v : s) cols.strata.push_back(std::to_string(v));
    return *this;
  }
  FrameBuilder& clusters(const std::vector<int>& c) {
    cols.clusters.clear();
    for (int v : c) cols.clusters.push_back("c" + std::to_string(v));
    return *this;
  }
  rerand::TrialFrame build() const {
    auto c = cols;
    const auto n = static_cast<Eigen::Index>(c.outcome.size() ? c.outcome.size() : c.arms.size());
    if (c.outcome.size() == 0) {
      c.outcome = Eigen::VectorXd::Zero(n);
      c.observed.assign(static_cast<std::size_t>(n), 0);
    }
    if (c.covariates.cols() == 0) c.covariates = Eigen::MatrixXd(n, 0);
    return rerand::TrialFrame::from_columns(std::move(c));
  }
};

}  // namespace testutil
