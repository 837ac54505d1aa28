#pragma once

// Attention head: a small tanh MLP from observation features to the att-CLF
// parameters (k1, k2, c1), optionally with Gaussian state estimates for
// (d, mu, kappa). Trained end-to-end through the CLF-QP by imitating expert
// controls, with hand-written backprop and Adam.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

#include "attclf/clf.hpp"
#include "attclf/csv.hpp"
#include "attclf/errors.hpp"
#include "attclf/path_geometry.hpp"
#include "attclf/qp.hpp"
#include "attclf/vehicle.hpp"

namespace attclf {

// ---------------------------------------------------------------- features

struct ObservationNoise {
  double d = 0.0;      // m
  double mu = 0.0;     // rad
  double v = 0.0;      // m/s
  double delta = 0.0;  // rad

  bool zero() const { return d == 0.0 && mu == 0.0 && v == 0.0 && delta == 0.0; }
  void validate() const {
    detail::require(d >= 0.0 && mu >= 0.0 && v >= 0.0 && delta >= 0.0, "noise", "standard deviations must be >= 0");
  }
};

struct FeatureConfig {
  std::vector<double> lookaheads{0.0, 5.0, 10.0, 20.0, 40.0};  // m
  double kappa_scale = 0.05;
  double d_scale = 1.0;
  double mu_scale = 0.3;
  double v_center = 8.0;
  double v_scale = 4.0;
  double delta_scale = 0.3;

  int preview_count() const { return static_cast<int>(lookaheads.size()); }
  int dim() const { return preview_count() + 4; }
  int state_offset() const { return preview_count(); }

  void validate() const {
    detail::require(!lookaheads.empty(), "features.lookaheads", "must not be empty");
    detail::require(kappa_scale > 0.0 && d_scale > 0.0 && mu_scale > 0.0 && v_scale > 0.0 && delta_scale > 0.0,
                    "features.scales", "must be > 0");
  }
};

/// Feature vector: scaled curvature preview followed by scaled (d, mu, v, delta).
/// The noisy observation is written directly into the state slots.
inline Eigen::VectorXd featurize(const FeatureConfig& fc, const PathSpec& path, const VehicleState& x,
                                 const ObservationNoise& noise = {}, std::mt19937_64* rng = nullptr) {
  Eigen::VectorXd z(fc.dim());
  for (int i = 0; i < fc.preview_count(); ++i) {
    z(i) = path.curvature_at(x.s + fc.lookaheads[static_cast<std::size_t>(i)]) / fc.kappa_scale;
  }
  double d = x.d, mu = x.mu, v = x.v, delta = x.delta;
  if (!noise.zero()) {
    if (rng == nullptr) throw std::invalid_argument("featurize: noise requested without a generator");
    std::normal_distribution<double> n01;
    d += noise.d * n01(*rng);
    mu += noise.mu * n01(*rng);
    v += noise.v * n01(*rng);
    delta += noise.delta * n01(*rng);
  }
  const int o = fc.state_offset();
  z(o) = d / fc.d_scale;
  z(o + 1) = mu / fc.mu_scale;
  z(o + 2) = (v - fc.v_center) / fc.v_scale;
  z(o + 3) = delta / fc.delta_scale;
  return z;
}

/// Adds observation noise to the state slots of an already clean feature vector.
inline Eigen::VectorXd add_observation_noise(const FeatureConfig& fc, Eigen::VectorXd z, const ObservationNoise& noise,
                                             std::mt19937_64& rng) {
  if (noise.zero()) return z;
  std::normal_distribution<double> n01;
  const int o = fc.state_offset();
  z(o) += noise.d * n01(rng) / fc.d_scale;
  z(o + 1) += noise.mu * n01(rng) / fc.mu_scale;
  z(o + 2) += noise.v * n01(rng) / fc.v_scale;
  z(o + 3) += noise.delta * n01(rng) / fc.delta_scale;
  return z;
}

/// Observed (d, mu, v, delta) recovered from a feature vector.
inline Eigen::Vector4d observed_state(const FeatureConfig& fc, const Eigen::VectorXd& z) {
  const int o = fc.state_offset();
  return {z(o) * fc.d_scale, z(o + 1) * fc.mu_scale, z(o + 2) * fc.v_scale + fc.v_center, z(o + 3) * fc.delta_scale};
}

// ------------------------------------------------------------------ head

/// Gaussian estimate of (d, mu, kappa).
struct StateDistribution {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  Eigen::Vector3d logvar = Eigen::Vector3d::Constant(-std::numeric_limits<double>::infinity());
};

struct HeadConfig {
  int hidden1 = 32;
  int hidden2 = 32;
  bool state_estimate = false;  // also emit mean and log-variance of (d, mu, kappa)
  double positive_floor = 1e-3;
  AttentionParams init_params{1.0, 1.0, 1.0};  // attention output of a zero last layer
  Eigen::Vector3d estimate_scale{1.0, 0.3, 0.05};

  int outputs() const { return state_estimate ? 9 : 3; }
  void validate() const {
    detail::require(hidden1 >= 1 && hidden2 >= 1, "head.hidden", "layer sizes must be >= 1");
    detail::require(positive_floor > 0.0, "head.positive_floor", "must be > 0");
    init_params.validate();
    detail::require(init_params.k1 > positive_floor && init_params.k2 > positive_floor &&
                        init_params.c1 > positive_floor,
                    "head.init_params", "must exceed positive_floor");
  }
};

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double softplus_inverse(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct HeadOutput {
  AttentionParams att;
  std::optional<StateDistribution> estimate;
  // Forward cache for backprop.
  Eigen::VectorXd z, h1, h2, out;
};

/// Offsets of W1, b1, W2, b2, W3, b3 inside the flat parameter vector
/// (matrices column-major).
struct HeadLayout {
  int in = 0, h1 = 0, h2 = 0, out = 0;
  Eigen::Index W1 = 0, b1 = 0, W2 = 0, b2 = 0, W3 = 0, b3 = 0, total = 0;

  HeadLayout() = default;
  HeadLayout(int input, int hidden1, int hidden2, int outputs) : in(input), h1(hidden1), h2(hidden2), out(outputs) {
    b1 = W1 + static_cast<Eigen::Index>(h1) * in;
    W2 = b1 + h1;
    b2 = W2 + static_cast<Eigen::Index>(h2) * h1;
    W3 = b2 + h2;
    b3 = W3 + static_cast<Eigen::Index>(out) * h2;
    total = b3 + out;
  }

  template <class Vec>
  static auto mat(Vec& v, Eigen::Index off, int rows, int cols) {
    using Scalar = std::remove_pointer_t<decltype(v.data())>;
    using M = std::conditional_t<std::is_const_v<Scalar>, const Eigen::MatrixXd, Eigen::MatrixXd>;
    return Eigen::Map<M>(v.data() + off, rows, cols);
  }
};

/// Fully connected tanh network input -> hidden1 -> hidden2 -> outputs with all
/// weights in one flat vector.
class AttentionHead {
 public:
  AttentionHead() = default;

  AttentionHead(int input_dim, HeadConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    detail::require(input_dim >= 1, "head.input_dim", "must be >= 1");
    layout_ = HeadLayout(input_dim, cfg_.hidden1, cfg_.hidden2, cfg_.outputs());
    theta_ = Eigen::VectorXd::Zero(layout_.total);
    std::mt19937_64 rng(seed);
    auto glorot = [&](Eigen::Index off, int rows, int cols) {
      const double lim = std::sqrt(6.0 / static_cast<double>(rows + cols));
      std::uniform_real_distribution<double> u(-lim, lim);
      auto W = HeadLayout::mat(theta_, off, rows, cols);
      for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i) W(i, j) = u(rng);
    };
    const HeadLayout& L = layout_;
    glorot(L.W1, L.h1, L.in);
    glorot(L.W2, L.h2, L.h1);
    glorot(L.W3, L.out, L.h2);
    theta_(L.b3) = softplus_inverse(cfg_.init_params.k1 - cfg_.positive_floor);
    theta_(L.b3 + 1) = softplus_inverse(cfg_.init_params.k2 - cfg_.positive_floor);
    theta_(L.b3 + 2) = softplus_inverse(cfg_.init_params.c1 - cfg_.positive_floor);
  }

  /// Restores a head from its configuration and flat weights.
  AttentionHead(int input_dim, HeadConfig cfg, Eigen::VectorXd theta) : cfg_(std::move(cfg)) {
    cfg_.validate();
    layout_ = HeadLayout(input_dim, cfg_.hidden1, cfg_.hidden2, cfg_.outputs());
    if (theta.size() != layout_.total) throw ValidationError("head.theta", "parameter count mismatch");
    if (!theta.allFinite()) throw ValidationError("head.theta", "weights must be finite");
    theta_ = std::move(theta);
  }

  int input_dim() const { return layout_.in; }
  const HeadConfig& config() const { return cfg_; }
  Eigen::Index num_params() const { return layout_.total; }
  const Eigen::VectorXd& theta() const { return theta_; }
  Eigen::VectorXd& theta() { return theta_; }

  HeadOutput forward(const Eigen::VectorXd& z) const {
    if (z.size() != layout_.in) throw ValidationError("features", "dimension mismatch with head input");
    const HeadLayout& L = layout_;
    HeadOutput r;
    r.z = z;
    r.h1 = (HeadLayout::mat(theta_, L.W1, L.h1, L.in) * z + theta_.segment(L.b1, L.h1)).array().tanh().matrix();
    r.h2 = (HeadLayout::mat(theta_, L.W2, L.h2, L.h1) * r.h1 + theta_.segment(L.b2, L.h2)).array().tanh().matrix();
    r.out = HeadLayout::mat(theta_, L.W3, L.out, L.h2) * r.h2 + theta_.segment(L.b3, L.out);
    const double fl = cfg_.positive_floor;
    r.att = {softplus(r.out(0)) + fl, softplus(r.out(1)) + fl, softplus(r.out(2)) + fl};
    if (cfg_.state_estimate) {
      StateDistribution e;
      for (int i = 0; i < 3; ++i) {
        e.mean(i) = r.out(3 + i) * cfg_.estimate_scale(i);
        e.logvar(i) = r.out(6 + i) + 2.0 * std::log(cfg_.estimate_scale(i));
      }
      r.estimate = e;
    }
    return r;
  }

  /// Gradient with respect to theta from loss gradients on the physical outputs.
  Eigen::VectorXd backward(const HeadOutput& f, const Eigen::Vector3d& d_att,
                           const Eigen::Vector3d& d_mean = Eigen::Vector3d::Zero(),
                           const Eigen::Vector3d& d_logvar = Eigen::Vector3d::Zero()) const {
    const HeadLayout& L = layout_;
    Eigen::VectorXd d_out = Eigen::VectorXd::Zero(L.out);
    for (int i = 0; i < 3; ++i) d_out(i) = d_att(i) * sigmoid(f.out(i));
    if (cfg_.state_estimate) {
      for (int i = 0; i < 3; ++i) {
        d_out(3 + i) = d_mean(i) * cfg_.estimate_scale(i);
        d_out(6 + i) = d_logvar(i);
      }
    }
    Eigen::VectorXd g = Eigen::VectorXd::Zero(L.total);
    HeadLayout::mat(g, L.W3, L.out, L.h2) = d_out * f.h2.transpose();
    g.segment(L.b3, L.out) = d_out;
    const Eigen::VectorXd d_h2 = (HeadLayout::mat(theta_, L.W3, L.out, L.h2).transpose() * d_out)
                                     .cwiseProduct((1.0 - f.h2.array().square()).matrix());
    HeadLayout::mat(g, L.W2, L.h2, L.h1) = d_h2 * f.h1.transpose();
    g.segment(L.b2, L.h2) = d_h2;
    const Eigen::VectorXd d_h1 = (HeadLayout::mat(theta_, L.W2, L.h2, L.h1).transpose() * d_h2)
                                     .cwiseProduct((1.0 - f.h1.array().square()).matrix());
    HeadLayout::mat(g, L.W1, L.h1, L.in) = d_h1 * f.z.transpose();
    g.segment(L.b1, L.h1) = d_h1;
    return g;
  }

 private:
  HeadConfig cfg_;
  HeadLayout layout_;
  Eigen::VectorXd theta_;
};

// ---------------------------------------------------------------- losses

/// Weighted squared error over (u_a, u_w).
inline double imitation_loss(const ControlInput& pred, const ControlInput& expert, const Eigen::Vector2d& weights) {
  const double ea = pred.accel - expert.accel, ew = pred.steer_rate - expert.steer_rate;
  return weights(0) * ea * ea + weights(1) * ew * ew;
}

/// Heteroscedastic Gaussian loss, summed over dimensions:
///   1/2 exp(-logvar) err^2 + 1/2 logvar.
inline double predictive_state_loss(const StateDistribution& est, const Eigen::Vector3d& truth) {
  double loss = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double err = truth(i) - est.mean(i);
    loss += 0.5 * std::exp(-est.logvar(i)) * err * err + 0.5 * est.logvar(i);
  }
  return loss;
}

// -------------------------------------------------------------- training

enum class ObservationMode { true_state, estimated };

inline ObservationMode parse_observation_mode(const std::string& s) {
  if (s == "true") return ObservationMode::true_state;
  if (s == "estimated") return ObservationMode::estimated;
  throw ValidationError("mode", "expected 'true' or 'estimated', got '" + s + "'");
}

inline std::string to_string(ObservationMode m) { return m == ObservationMode::true_state ? "true" : "estimated"; }

struct ExpertSample {
  int path_id = 0;
  double t = 0.0;
  VehicleState state;
  double kappa = 0.0;        // path curvature at state.s
  Eigen::VectorXd features;  // clean (noise-free) features
  ControlInput expert;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 32;
  int epochs = 20;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  Eigen::Vector2d control_weights{0.1, 1.0};
  double state_weight = 1.0;
  double aux_weight = 0.0;
  double max_skip_fraction = 0.1;
  ObservationNoise noise;  // applied to features on the fly in estimated mode

  void validate() const {
    detail::require(learning_rate >= 0.0, "train.learning_rate", "must be >= 0");
    detail::require(batch_size >= 1, "train.batch_size", "must be >= 1");
    detail::require(epochs >= 0, "train.epochs", "must be >= 0");
    detail::require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "train.betas", "must lie in [0, 1)");
    detail::require(adam_eps > 0.0, "train.adam_eps", "must be > 0");
    detail::require(control_weights(0) >= 0.0 && control_weights(1) >= 0.0, "train.control_weights", "must be >= 0");
    detail::require(state_weight >= 0.0, "train.state_weight", "must be >= 0");
    detail::require(aux_weight == 0.0, "train.aux_weight",
                    "auxiliary v/delta losses are unavailable: v and delta are observed inputs");
    detail::require(max_skip_fraction >= 0.0 && max_skip_fraction <= 1.0, "train.max_skip_fraction",
                    "must lie in [0, 1]");
    noise.validate();
  }
};

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long step = 0;
};

inline void adam_update(Eigen::VectorXd& theta, const Eigen::VectorXd& grad, AdamState& st, const TrainConfig& cfg) {
  if (st.m.size() != theta.size()) {
    st.m = Eigen::VectorXd::Zero(theta.size());
    st.v = Eigen::VectorXd::Zero(theta.size());
  }
  ++st.step;
  st.m = cfg.beta1 * st.m + (1.0 - cfg.beta1) * grad;
  st.v = cfg.beta2 * st.v + (1.0 - cfg.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  theta.array() -= cfg.learning_rate * (st.m.array() / c1) / ((st.v.array() / c2).sqrt() + cfg.adam_eps);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Vehicle state and curvature the controller acts on. In estimated mode
/// (d, mu, kappa) come from the head and (v, delta) from the noisy observation.
struct ControllerView {
  VehicleState state;
  double kappa = 0.0;
};

inline ControllerView controller_view(ObservationMode mode, const FeatureConfig& fc, const VehicleState& truth,
                                      double true_kappa, const Eigen::VectorXd& z, const HeadOutput& f) {
  if (mode == ObservationMode::true_state) return {truth, true_kappa};
  if (!f.estimate) throw ValidationError("head.state_estimate", "estimated mode needs a head with state outputs");
  const Eigen::Vector4d obs = observed_state(fc, z);
  const StateDistribution& e = *f.estimate;
  return {{truth.s, e.mean(0), e.mean(1), obs(2), obs(3)}, e.mean(2)};
}

struct SampleResult {
  double control_loss = 0.0;
  double state_loss = 0.0;
  bool skipped = false;
  Eigen::VectorXd grad;  // empty unless requested
};

struct LearnerContext {
  ObservationMode mode = ObservationMode::true_state;
  FeatureConfig features;
  ClfConfig clf;
  VehicleParams vehicle;
  QpSettings qp;
};

/// Loss (and optionally gradient w.r.t. theta) for one sample with the given
/// feature vector. The control loss reaches theta through the attention
/// parameters and, in estimated mode, through the state estimates.
inline SampleResult sample_loss(const AttentionHead& head, const LearnerContext& ctx, const TrainConfig& tc,
                                const ExpertSample& s, const Eigen::VectorXd& z, bool with_grad) {
  SampleResult r;
  const HeadOutput f = head.forward(z);
  Eigen::Vector3d d_mean = Eigen::Vector3d::Zero(), d_logvar = Eigen::Vector3d::Zero();
  if (ctx.mode == ObservationMode::estimated) {
    if (!f.estimate) throw ValidationError("head.state_estimate", "estimated mode needs a head with state outputs");
    const Eigen::Vector3d truth(s.state.d, s.state.mu, s.kappa);
    r.state_loss = predictive_state_loss(*f.estimate, truth);
    for (int i = 0; i < 3; ++i) {
      const double err = truth(i) - f.estimate->mean(i);
      const double inv = std::exp(-f.estimate->logvar(i));
      d_mean(i) = -tc.state_weight * inv * err;
      d_logvar(i) = tc.state_weight * 0.5 * (1.0 - inv * err * err);
    }
  }
  try {
    const ControllerView view = controller_view(ctx.mode, ctx.features, s.state, s.kappa, z, f);
    const ConstraintCoeffs coeffs = attclf_constraint_coeffs(f.att, ctx.clf, ctx.vehicle, view.kappa, view.state);
    const QpProblem qp = clf_qp(coeffs, ctx.clf, ctx.vehicle, view.state);
    const QpSolution sol = solve(qp, ctx.qp);
    const ControlInput u{sol.primal(0), sol.primal(1)};
    r.control_loss = imitation_loss(u, s.expert, tc.control_weights);
    if (!std::isfinite(r.control_loss)) throw QpGradientError("non-finite control loss");
    if (with_grad) {
      Eigen::VectorXd dl = Eigen::VectorXd::Zero(3);
      dl(0) = 2.0 * tc.control_weights(0) * (u.accel - s.expert.accel);
      dl(1) = 2.0 * tc.control_weights(1) * (u.steer_rate - s.expert.steer_rate);
      const QpGradients qg = grad_solution(qp, sol, dl, ctx.qp);
      const Eigen::Vector2d dl_da = qg.dG.row(0).head<2>().transpose();
      const double dl_db = qg.dh(0);
      const CoeffSensitivity sens = constraint_sensitivity(f.att, ctx.clf, coeffs);
      const Eigen::Vector3d d_att = sens.da.transpose() * dl_da + dl_db * sens.db;
      if (ctx.mode == ObservationMode::estimated) {
        // (a, b) as functions of the estimated (d, mu, kappa), by central differences.
        constexpr double h = 1e-6;
        for (int i = 0; i < 3; ++i) {
          auto shifted = [&](double t) {
            ControllerView v = view;
            if (i == 0) v.state.d += t;
            if (i == 1) v.state.mu += t;
            if (i == 2) v.kappa += t;
            return attclf_constraint_coeffs(f.att, ctx.clf, ctx.vehicle, v.kappa, v.state);
          };
          const ConstraintCoeffs cp = shifted(h), cm = shifted(-h);
          d_mean(i) += dl_da.dot((cp.a - cm.a) / (2.0 * h)) + dl_db * (cp.b - cm.b) / (2.0 * h);
        }
      }
      r.grad = head.backward(f, d_att, d_mean, d_logvar);
      if (!r.grad.allFinite()) throw QpGradientError("non-finite gradient");
    }
  } catch (const SingularityError&) {
    r.skipped = true;
  } catch (const QpGradientError&) {
    r.skipped = true;
  } catch (const QpInfeasibleError&) {
    r.skipped = true;
  }
  if (r.skipped) r.grad.resize(0);
  return r;
}

/// Feature vector seen by the learner for sample `index` under stream `stream`.
inline Eigen::VectorXd training_features(const LearnerContext& ctx, const TrainConfig& tc, const ExpertSample& s,
                                         std::uint64_t stream, std::size_t index) {
  if (ctx.mode == ObservationMode::true_state || tc.noise.zero()) return s.features;
  std::mt19937_64 rng(mix_seed(mix_seed(tc.seed, stream), index));
  return add_observation_noise(ctx.features, s.features, tc.noise, rng);
}

struct EpochStats {
  int epoch = 0;
  double control_loss = 0.0;
  double state_loss = 0.0;
  double skip_rate = 0.0;
};

inline constexpr std::uint64_t kEvalStream = 0xE7A1;

/// Mean losses of the current head over a dataset (fixed noise stream).
inline EpochStats evaluate_dataset(const AttentionHead& head, const LearnerContext& ctx, const TrainConfig& tc,
                                   const std::vector<ExpertSample>& data, int epoch = 0) {
  EpochStats st;
  st.epoch = epoch;
  std::size_t used = 0, skipped = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const SampleResult r = sample_loss(head, ctx, tc, data[i], training_features(ctx, tc, data[i], kEvalStream, i),
                                       false);
    if (r.skipped) {
      ++skipped;
      continue;
    }
    ++used;
    st.control_loss += r.control_loss;
    st.state_loss += r.state_loss;
  }
  if (used > 0) {
    st.control_loss /= static_cast<double>(used);
    st.state_loss /= static_cast<double>(used);
  }
  st.skip_rate = data.empty() ? 0.0 : static_cast<double>(skipped) / static_cast<double>(data.size());
  return st;
}

struct TrainState {
  AttentionHead head;
  AdamState adam;
  int epoch = 0;  // completed epochs
};

/// Runs epochs st.epoch+1 .. tc.epochs. Epoch 0 (the untrained head) is
/// evaluated and reported first when starting fresh. Each reported row is a
/// full-dataset evaluation after that epoch's updates.
inline std::vector<EpochStats> train(TrainState& st, const LearnerContext& ctx, const TrainConfig& tc,
                                     const std::vector<ExpertSample>& data) {
  tc.validate();
  ctx.clf.validate();
  if (data.empty()) throw ValidationError("dataset", "training set is empty");
  for (const auto& s : data) {
    if (s.features.size() != st.head.input_dim())
      throw ValidationError("dataset", "feature dimension does not match the head");
  }
  std::vector<EpochStats> curve;
  if (st.epoch == 0) curve.push_back(evaluate_dataset(st.head, ctx, tc, data, 0));
  std::vector<std::size_t> order(data.size());
  for (int e = st.epoch + 1; e <= tc.epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(mix_seed(tc.seed, static_cast<std::uint64_t>(e)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    std::size_t skipped = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(tc.batch_size));
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(st.head.num_params());
      std::size_t used = 0;
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t i = order[b];
        const Eigen::VectorXd z = training_features(ctx, tc, data[i], static_cast<std::uint64_t>(e), i);
        const SampleResult r = sample_loss(st.head, ctx, tc, data[i], z, true);
        if (r.skipped) {
          ++skipped;
          continue;
        }
        grad += r.grad;
        ++used;
      }
      if (static_cast<double>(skipped) > tc.max_skip_fraction * static_cast<double>(data.size())) {
        throw std::runtime_error("training epoch " + std::to_string(e) + " aborted: more than " +
                                 std::to_string(tc.max_skip_fraction * 100.0) + "% of samples skipped");
      }
      if (used == 0) continue;
      adam_update(st.head.theta(), grad / static_cast<double>(used), st.adam, tc);
    }
    st.epoch = e;
    curve.push_back(evaluate_dataset(st.head, ctx, tc, data, e));
  }
  return curve;
}

// ------------------------------------------------------------- checkpoint

struct Checkpoint {
  std::string config_hash;
  FeatureConfig features;
  ObservationMode mode = ObservationMode::true_state;
  TrainState state;
};

inline void write_checkpoint(std::ostream& os, const Checkpoint& c) {
  auto vec = [&](const char* name, const Eigen::VectorXd& v) {
    os << name << ' ' << v.size();
    for (Eigen::Index i = 0; i < v.size(); ++i) os << ' ' << csv::fmt(v(i));
    os << '\n';
  };
  const HeadConfig& h = c.state.head.config();
  os << "attclf-head 1\n";
  os << "config_hash " << c.config_hash << '\n';
  os << "mode " << to_string(c.mode) << '\n';
  os << "lookaheads " << c.features.lookaheads.size();
  for (double l : c.features.lookaheads) os << ' ' << csv::fmt(l);
  os << '\n';
  os << "feature_scales " << csv::fmt(c.features.kappa_scale) << ' ' << csv::fmt(c.features.d_scale) << ' '
     << csv::fmt(c.features.mu_scale) << ' ' << csv::fmt(c.features.v_center) << ' ' << csv::fmt(c.features.v_scale)
     << ' ' << csv::fmt(c.features.delta_scale) << '\n';
  os << "input_dim " << c.state.head.input_dim() << '\n';
  os << "hidden " << h.hidden1 << ' ' << h.hidden2 << '\n';
  os << "state_estimate " << (h.state_estimate ? 1 : 0) << '\n';
  os << "positive_floor " << csv::fmt(h.positive_floor) << '\n';
  os << "init_params " << csv::fmt(h.init_params.k1) << ' ' << csv::fmt(h.init_params.k2) << ' '
     << csv::fmt(h.init_params.c1) << '\n';
  os << "estimate_scale " << csv::fmt(h.estimate_scale(0)) << ' ' << csv::fmt(h.estimate_scale(1)) << ' '
     << csv::fmt(h.estimate_scale(2)) << '\n';
  os << "epoch " << c.state.epoch << '\n';
  os << "adam_step " << c.state.adam.step << '\n';
  vec("theta", c.state.head.theta());
  vec("adam_m", c.state.adam.m.size() ? c.state.adam.m : Eigen::VectorXd());
  vec("adam_v", c.state.adam.v.size() ? c.state.adam.v : Eigen::VectorXd());
}

inline Checkpoint read_checkpoint(std::istream& is) {
  auto expect = [&](const std::string& key) {
    std::string k;
    if (!(is >> k) || k != key) throw ValidationError("checkpoint", "expected '" + key + "', got '" + k + "'");
  };
  auto num = [&](const std::string& what) {
    std::string tok;
    if (!(is >> tok)) throw ValidationError("checkpoint", "truncated at " + what);
    return csv::to_double(tok, "checkpoint." + what);
  };
  auto vec = [&](const std::string& key) {
    expect(key);
    const auto n = static_cast<Eigen::Index>(num(key));
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = num(key);
    return v;
  };
  Checkpoint c;
  expect("attclf-head");
  if (num("version") != 1) throw ValidationError("checkpoint", "unsupported version");
  expect("config_hash");
  is >> c.config_hash;
  expect("mode");
  std::string mode;
  is >> mode;
  c.mode = parse_observation_mode(mode);
  expect("lookaheads");
  const auto nl = static_cast<std::size_t>(num("lookaheads"));
  c.features.lookaheads.resize(nl);
  for (auto& l : c.features.lookaheads) l = num("lookaheads");
  expect("feature_scales");
  c.features.kappa_scale = num("feature_scales");
  c.features.d_scale = num("feature_scales");
  c.features.mu_scale = num("feature_scales");
  c.features.v_center = num("feature_scales");
  c.features.v_scale = num("feature_scales");
  c.features.delta_scale = num("feature_scales");
  HeadConfig h;
  expect("input_dim");
  const int input_dim = static_cast<int>(num("input_dim"));
  expect("hidden");
  h.hidden1 = static_cast<int>(num("hidden"));
  h.hidden2 = static_cast<int>(num("hidden"));
  expect("state_estimate");
  h.state_estimate = num("state_estimate") != 0.0;
  expect("positive_floor");
  h.positive_floor = num("positive_floor");
  expect("init_params");
  h.init_params.k1 = num("init_params");
  h.init_params.k2 = num("init_params");
  h.init_params.c1 = num("init_params");
  expect("estimate_scale");
  for (int i = 0; i < 3; ++i) h.estimate_scale(i) = num("estimate_scale");
  expect("epoch");
  c.state.epoch = static_cast<int>(num("epoch"));
  expect("adam_step");
  c.state.adam.step = static_cast<long>(num("adam_step"));
  Eigen::VectorXd theta = vec("theta");
  c.state.adam.m = vec("adam_m");
  c.state.adam.v = vec("adam_v");
  c.state.head = AttentionHead(input_dim, h, std::move(theta));
  if (input_dim != c.features.dim()) throw ValidationError("checkpoint", "input_dim does not match lookaheads");
  return c;
}

}  // namespace attclf
