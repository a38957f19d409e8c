#include "rerand/learners.hpp"

#include "rerand/errors.hpp"
#include "rerand/keyvalue.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>

namespace rerand {

namespace {

class ConstantPredictor : public Predictor {
 public:
  explicit ConstantPredictor(double v) : v_(v) {}
  double predict(const Eigen::Ref<const Eigen::RowVectorXd>&) const override { return v_; }

 private:
  double v_;
};

// Columns with positive spread in the training rows.
std::vector<Eigen::Index> varying_columns(const Eigen::MatrixXd& X) {
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    if (X.col(j).maxCoeff() - X.col(j).minCoeff() > 1e-12 * (1.0 + X.col(j).cwiseAbs().maxCoeff())) {
      keep.push_back(j);
    }
  }
  return keep;
}

bool is_constant(const Eigen::VectorXd& y) { return y.maxCoeff() - y.minCoeff() == 0.0; }

class GlmPredictor : public Predictor {
 public:
  GlmPredictor(Link link, std::vector<Eigen::Index> cols, Eigen::VectorXd beta)
      : link_(link), cols_(std::move(cols)), beta_(std::move(beta)) {}
  double predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const override {
    double eta = beta_[0];
    for (std::size_t j = 0; j < cols_.size(); ++j) eta += beta_[static_cast<Eigen::Index>(j) + 1] * x[cols_[j]];
    return inverse_link(link_, eta);
  }

 private:
  Link link_;
  std::vector<Eigen::Index> cols_;
  Eigen::VectorXd beta_;
};

class KnnPredictor : public Predictor {
 public:
  KnnPredictor(const Eigen::MatrixXd& X, Eigen::VectorXd y, int k) : y_(std::move(y)) {
    cols_ = varying_columns(X);
    const auto n = X.rows();
    const auto p = static_cast<Eigen::Index>(cols_.size());
    center_.resize(p);
    scale_.resize(p);
    Z_.resize(n, p);
    for (Eigen::Index j = 0; j < p; ++j) {
      const Eigen::VectorXd c = X.col(cols_[static_cast<std::size_t>(j)]);
      center_[j] = c.mean();
      scale_[j] = std::sqrt((c.array() - center_[j]).square().sum() / static_cast<double>(n));
      Z_.col(j) = (c.array() - center_[j]) / scale_[j];
    }
    k_ = std::min<Eigen::Index>(k, n);
  }

  double predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const override {
    const auto n = Z_.rows();
    Eigen::RowVectorXd z(Z_.cols());
    for (Eigen::Index j = 0; j < Z_.cols(); ++j) z[j] = (x[cols_[static_cast<std::size_t>(j)]] - center_[j]) / scale_[j];
    std::vector<std::pair<double, Eigen::Index>> d(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) d[static_cast<std::size_t>(i)] = {(Z_.row(i) - z).squaredNorm(), i};
    std::partial_sort(d.begin(), d.begin() + k_, d.end());
    double s = 0;
    for (Eigen::Index i = 0; i < k_; ++i) s += y_[d[static_cast<std::size_t>(i)].second];
    return s / static_cast<double>(k_);
  }

 private:
  std::vector<Eigen::Index> cols_;
  Eigen::VectorXd center_, scale_, y_;
  Eigen::MatrixXd Z_;
  Eigen::Index k_ = 1;
};

struct Stump {
  Eigen::Index feature;
  double threshold;
  double left, right;
};

class StumpPredictor : public Predictor {
 public:
  StumpPredictor(double base, std::vector<Stump> stumps, bool logistic)
      : base_(base), stumps_(std::move(stumps)), logistic_(logistic) {}
  double predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const override {
    double f = base_;
    for (const auto& s : stumps_) f += x[s.feature] <= s.threshold ? s.left : s.right;
    return logistic_ ? expit(f) : f;
  }

 private:
  double base_;
  std::vector<Stump> stumps_;
  bool logistic_;
};

// Stage-wise boosting of depth-1 trees. Least squares on residuals, or a
// Newton step on the logistic loss for propensities.
std::unique_ptr<Predictor> fit_stumps(const LearnerSpec& spec, bool logistic, const Eigen::MatrixXd& X,
                                      const Eigen::VectorXd& y) {
  const auto n = X.rows();
  const double ybar = y.mean();
  if (logistic && (ybar <= 0.0 || ybar >= 1.0)) return std::make_unique<ConstantPredictor>(ybar);
  const double base = logistic ? std::log(ybar / (1 - ybar)) : ybar;
  const auto cols = varying_columns(X);
  std::vector<std::vector<Eigen::Index>> order;
  for (auto j : cols) {
    std::vector<Eigen::Index> o(static_cast<std::size_t>(n));
    std::iota(o.begin(), o.end(), 0);
    std::stable_sort(o.begin(), o.end(), [&](auto a, auto b) { return X(a, j) < X(b, j); });
    order.push_back(std::move(o));
  }
  Eigen::VectorXd F = Eigen::VectorXd::Constant(n, base);
  Eigen::VectorXd g(n), h(n);
  std::vector<Stump> stumps;
  const Eigen::Index min_leaf = std::max(1, spec.min_leaf);
  for (int m = 0; m < spec.trees; ++m) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (logistic) {
        const double p = expit(F[i]);
        g[i] = y[i] - p;
        h[i] = std::max(p * (1 - p), 1e-12);
      } else {
        g[i] = y[i] - F[i];
        h[i] = 1.0;
      }
    }
    const double gsum = g.sum(), hsum = h.sum();
    double best_gain = 0;
    std::optional<Stump> best;
    for (std::size_t c = 0; c < cols.size(); ++c) {
      const auto j = cols[c];
      const auto& o = order[c];
      double gl = 0, hl = 0;
      for (Eigen::Index k = 0; k + 1 < n; ++k) {
        const auto i = o[static_cast<std::size_t>(k)];
        gl += g[i];
        hl += h[i];
        const auto next = o[static_cast<std::size_t>(k + 1)];
        if (X(i, j) == X(next, j)) continue;
        if (k + 1 < min_leaf || n - k - 1 < min_leaf) continue;
        const double gr = gsum - gl, hr = hsum - hl;
        const double gain = gl * gl / hl + gr * gr / hr - gsum * gsum / hsum;
        if (gain > best_gain + 1e-12) {
          best_gain = gain;
          best = Stump{j, 0.5 * (X(i, j) + X(next, j)), gl / hl, gr / hr};
        }
      }
    }
    if (!best) break;
    best->left *= spec.learning_rate;
    best->right *= spec.learning_rate;
    for (Eigen::Index i = 0; i < n; ++i) F[i] += X(i, best->feature) <= best->threshold ? best->left : best->right;
    stumps.push_back(*best);
  }
  return std::make_unique<StumpPredictor>(base, std::move(stumps), logistic);
}

}  // namespace

Eigen::VectorXd Predictor::predict_all(const Eigen::MatrixXd& X) const {
  Eigen::VectorXd out(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) out[i] = predict(X.row(i));
  return out;
}

LearnerSpec learner_from_string(const std::string& text) {
  const auto parts = split_list(text, ':');
  if (parts.empty()) throw ParseError("empty learner specification");
  LearnerSpec s;
  const auto& kind = parts[0];
  auto arg = [&](std::size_t i) -> const std::string* { return i < parts.size() ? &parts[i] : nullptr; };
  if (kind == "glm") {
    s.kind = LearnerKind::glm;
    if (auto a = arg(1)) s.link = link_from_string(*a);
    if (parts.size() > 2) throw ParseError("glm learner takes at most one argument");
  } else if (kind == "knn") {
    s.kind = LearnerKind::knn;
    if (auto a = arg(1)) s.k_neighbors = static_cast<int>(parse_int(*a, "knn neighbours"));
    if (s.k_neighbors < 1) throw ParseError("knn needs k >= 1");
    if (parts.size() > 2) throw ParseError("knn learner takes at most one argument");
  } else if (kind == "stumps") {
    s.kind = LearnerKind::stump_ensemble;
    if (auto a = arg(1)) s.trees = static_cast<int>(parse_int(*a, "stump count"));
    if (auto a = arg(2)) s.learning_rate = parse_double(*a, "learning rate");
    if (s.trees < 0 || !(s.learning_rate > 0)) throw ParseError("stumps need trees >= 0 and rate > 0");
    if (parts.size() > 3) throw ParseError("stumps learner takes at most two arguments");
  } else if (kind == "mean") {
    s.kind = LearnerKind::mean;
  } else if (kind == "zero") {
    s.kind = LearnerKind::zero;
  } else {
    throw ParseError("unknown learner '" + kind + "' (expected glm, knn, stumps, mean or zero)");
  }
  return s;
}

std::string to_string(const LearnerSpec& s) {
  switch (s.kind) {
    case LearnerKind::glm: return "glm:" + to_string(s.link);
    case LearnerKind::knn: return "knn:" + std::to_string(s.k_neighbors);
    case LearnerKind::stump_ensemble: {
      std::ostringstream os;
      os << "stumps:" << s.trees << ":" << s.learning_rate;
      return os.str();
    }
    case LearnerKind::mean: return "mean";
    case LearnerKind::zero: return "zero";
  }
  return "glm";
}

std::unique_ptr<Predictor> fit_learner(const LearnerSpec& spec, LearnerTarget target, const Eigen::MatrixXd& X,
                                       const Eigen::VectorXd& y) {
  if (X.rows() == 0 || y.size() != X.rows()) throw ValidationError("learner needs a non-empty training set");
  const bool binary = target == LearnerTarget::missingness;
  switch (spec.kind) {
    case LearnerKind::zero: return std::make_unique<ConstantPredictor>(0.0);
    case LearnerKind::mean: return std::make_unique<ConstantPredictor>(y.mean());
    case LearnerKind::knn: return std::make_unique<KnnPredictor>(X, y, spec.k_neighbors);
    case LearnerKind::stump_ensemble: return fit_stumps(spec, binary, X, y);
    case LearnerKind::glm: {
      if (is_constant(y)) return std::make_unique<ConstantPredictor>(y[0]);
      const Link link = binary ? Link::logit : spec.link;
      auto cols = varying_columns(X);
      Eigen::MatrixXd Z(X.rows(), static_cast<Eigen::Index>(cols.size()) + 1);
      Z.col(0).setOnes();
      for (std::size_t j = 0; j < cols.size(); ++j) Z.col(static_cast<Eigen::Index>(j) + 1) = X.col(cols[j]);
      auto beta = fit_glm(link, Z, y, Eigen::VectorXd::Ones(X.rows()));
      return std::make_unique<GlmPredictor>(link, std::move(cols), std::move(beta));
    }
  }
  throw ValidationError("unknown learner kind");
}

}  // namespace rerand
