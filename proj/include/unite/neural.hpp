#ifndef UNITE_NEURAL_HPP
#define UNITE_NEURAL_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "unite/conjugate.hpp"
#include "unite/core.hpp"

namespace unite {

// Architecture dimensions. The recurrent input is the 16 standardized
// segment features concatenated with the 16-dimensional time-of-week
// embedding; the prior layer projects the skip-concatenated 64-vector to
// the four normal-gamma hyperparameters.
constexpr int kTodRows = 96;
constexpr int kDowRows = 7;
constexpr int kEmbedDim = 8;
constexpr int kInputDim = 32;
constexpr int kHiddenDim = 32;
constexpr int kSkipDim = kHiddenDim + kInputDim;
constexpr int kPriorOut = 4;

/// Floor for the expected speed used in arrival-time propagation (m/s).
constexpr double kMinPropagationSpeed = 0.5;

/// All trainable weights in one flat buffer plus the non-trainable
/// configuration (ELU floor a, epsilon, feature standardization).
struct ModelParams {
  // flat layout: W_tod | W_dow | gru(update, reset, candidate) | W_out
  static constexpr size_t off_tod = 0;
  static constexpr size_t off_dow = off_tod + size_t(kTodRows) * kEmbedDim;
  static constexpr size_t gate_w = size_t(kHiddenDim) * kInputDim;
  static constexpr size_t gate_u = size_t(kHiddenDim) * kHiddenDim;
  static constexpr size_t gate_size = gate_w + gate_u + kHiddenDim;
  static constexpr size_t off_gru = off_dow + size_t(kDowRows) * kEmbedDim;
  static constexpr size_t off_out = off_gru + 3 * gate_size;
  static constexpr size_t param_count = off_out + size_t(kSkipDim) * kPriorOut;

  std::vector<double> w = std::vector<double>(param_count, 0.0);
  double a = 1.0;
  double epsilon = 1e-6;
  std::array<double, kSegmentFeatures> feat_mean{};
  std::array<double, kSegmentFeatures> feat_scale = [] {
    std::array<double, kSegmentFeatures> s;
    s.fill(1.0);
    return s;
  }();

  double* tod_row(int r) { return w.data() + off_tod + size_t(r) * kEmbedDim; }
  const double* tod_row(int r) const { return w.data() + off_tod + size_t(r) * kEmbedDim; }
  double* dow_row(int r) { return w.data() + off_dow + size_t(r) * kEmbedDim; }
  const double* dow_row(int r) const { return w.data() + off_dow + size_t(r) * kEmbedDim; }
  // gate: 0 = update, 1 = reset, 2 = candidate
  const double* gru_w(int gate) const { return w.data() + off_gru + gate * gate_size; }
  const double* gru_u(int gate) const { return gru_w(gate) + gate_w; }
  const double* gru_b(int gate) const { return gru_u(gate) + gate_u; }
  const double* out_w() const { return w.data() + off_out; }
};

/// Glorot-uniform weights, zero biases.
inline ModelParams init_params(uint64_t seed, double a = 1.0, double epsilon = 1e-6) {
  ModelParams p;
  p.a = a;
  p.epsilon = epsilon;
  std::mt19937_64 rng(seed);
  auto fill = [&](size_t off, size_t n, int fan_in, int fan_out) {
    double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (size_t i = 0; i < n; ++i) p.w[off + i] = dist(rng);
  };
  fill(ModelParams::off_tod, size_t(kTodRows) * kEmbedDim, kTodRows, kEmbedDim);
  fill(ModelParams::off_dow, size_t(kDowRows) * kEmbedDim, kDowRows, kEmbedDim);
  for (int g = 0; g < 3; ++g) {
    size_t off = ModelParams::off_gru + g * ModelParams::gate_size;
    fill(off, ModelParams::gate_w, kInputDim, kHiddenDim);
    fill(off + ModelParams::gate_w, ModelParams::gate_u, kHiddenDim, kHiddenDim);
    // biases stay zero
  }
  fill(ModelParams::off_out, size_t(kSkipDim) * kPriorOut, kSkipDim, kPriorOut);
  return p;
}

/// Row-select embedding of the time of week: 8 time-of-day dims followed by
/// 8 day-of-week dims.
inline std::array<double, 2 * kEmbedDim> embed_time(TimeOfWeek tau, const ModelParams& p) {
  std::array<double, 2 * kEmbedDim> out;
  const double* tod = p.tod_row(tau.quarter_hour());
  const double* dow = p.dow_row(tau.day_of_week());
  for (int k = 0; k < kEmbedDim; ++k) out[k] = tod[k];
  for (int k = 0; k < kEmbedDim; ++k) out[kEmbedDim + k] = dow[k];
  return out;
}

inline double elu(double x, double a) { return x > 0.0 ? x : a * std::expm1(x); }
inline double elu_grad(double x, double a) { return x > 0.0 ? 1.0 : a * std::exp(x); }

/// Projection of the skip vector to normal-gamma hyperparameters with the
/// positivity constraints: kappa = ELU_a + a + eps, alpha/beta = |.| + eps.
inline NormalGamma prior_function_layer(std::span<const double> h, const ModelParams& p,
                                        std::array<double, kPriorOut>* h1_out = nullptr) {
  std::array<double, kPriorOut> h1{};
  const double* W = p.out_w();
  for (int k = 0; k < kSkipDim; ++k) {
    for (int j = 0; j < kPriorOut; ++j) h1[j] += h[k] * W[k * kPriorOut + j];
  }
  for (double v : h1) {
    if (!std::isfinite(v)) throw NumericError("prior_function_layer: non-finite output");
  }
  if (h1_out) *h1_out = h1;
  NormalGamma ng;
  ng.mu = h1[0];
  ng.kappa = elu(h1[1], p.a) + p.a + p.epsilon;
  ng.alpha = std::fabs(h1[2]) + p.epsilon;
  ng.beta = std::fabs(h1[3]) + p.epsilon;
  return ng;
}

/// Supplies the posterior used for the predictive and for arrival-time
/// propagation. Estimators plug record selection in here; the GRU baseline
/// returns the prior unchanged.
using PosteriorHook =
    std::function<NormalGamma(size_t i, const NormalGamma& prior, TimeOfWeek tau)>;

inline NormalGamma prior_only_hook(size_t, const NormalGamma& prior, TimeOfWeek) {
  return prior;
}

/// Per-segment forward cache; together these form the tape for the exact
/// reverse pass.
struct StepCache {
  std::array<double, kInputDim> x;
  int tod_row = 0;
  int dow_row = 0;
  std::array<double, kHiddenDim> z_prev;
  std::array<double, kHiddenDim> u, r, n, z;
  std::array<double, kPriorOut> h1;
  NormalGamma prior;
  NormalGamma post;
  TimeOfWeek tau;
};

struct RouteForward {
  std::vector<StepCache> steps;

  std::vector<NormalGamma> priors() const {
    std::vector<NormalGamma> out;
    out.reserve(steps.size());
    for (const auto& s : steps) out.push_back(s.prior);
    return out;
  }
};

inline RouteForward forward_route(const RoadNetwork& net, const Route& route,
                                  const std::vector<std::optional<TimeOfWeek>>& arrivals,
                                  const ModelParams& p,
                                  const PosteriorHook& hook = prior_only_hook) {
  if (route.empty()) throw DataError("forward_route: empty route");
  if (arrivals.size() != route.size()) {
    throw DataError("forward_route: arrivals/route size mismatch");
  }
  if (!arrivals[0]) throw DataError("forward_route: first arrival must be known");

  RouteForward fwd;
  fwd.steps.resize(route.size());
  std::array<double, kHiddenDim> z{};  // z_0 = 0
  TimeOfWeek tau = *arrivals[0];

  for (size_t i = 0; i < route.size(); ++i) {
    StepCache& st = fwd.steps[i];
    if (arrivals[i]) tau = *arrivals[i];
    st.tau = tau;

    const Segment& seg = net.segment(route[i]);
    for (int k = 0; k < kSegmentFeatures; ++k) {
      st.x[k] = (seg.features[k] - p.feat_mean[k]) / p.feat_scale[k];
    }
    st.tod_row = tau.quarter_hour();
    st.dow_row = tau.day_of_week();
    auto emb = embed_time(tau, p);
    for (int k = 0; k < 2 * kEmbedDim; ++k) st.x[kSegmentFeatures + k] = emb[k];

    st.z_prev = z;
    // GRU cell: z_i = u .* z_prev + (1-u) .* n
    auto gate_pre = [&](int gate, const std::array<double, kHiddenDim>& hidden) {
      std::array<double, kHiddenDim> pre;
      const double* W = p.gru_w(gate);
      const double* U = p.gru_u(gate);
      const double* b = p.gru_b(gate);
      for (int o = 0; o < kHiddenDim; ++o) {
        double acc = b[o];
        const double* Wo = W + size_t(o) * kInputDim;
        const double* Uo = U + size_t(o) * kHiddenDim;
        for (int k = 0; k < kInputDim; ++k) acc += Wo[k] * st.x[k];
        for (int k = 0; k < kHiddenDim; ++k) acc += Uo[k] * hidden[k];
        pre[o] = acc;
      }
      return pre;
    };
    auto u_pre = gate_pre(0, st.z_prev);
    auto r_pre = gate_pre(1, st.z_prev);
    for (int o = 0; o < kHiddenDim; ++o) {
      st.u[o] = 1.0 / (1.0 + std::exp(-u_pre[o]));
      st.r[o] = 1.0 / (1.0 + std::exp(-r_pre[o]));
    }
    std::array<double, kHiddenDim> gated;
    for (int o = 0; o < kHiddenDim; ++o) gated[o] = st.r[o] * st.z_prev[o];
    auto n_pre = gate_pre(2, gated);
    for (int o = 0; o < kHiddenDim; ++o) st.n[o] = std::tanh(n_pre[o]);
    for (int o = 0; o < kHiddenDim; ++o) {
      st.z[o] = st.u[o] * st.z_prev[o] + (1.0 - st.u[o]) * st.n[o];
      if (!std::isfinite(st.z[o])) throw NumericError("forward_route: non-finite state");
    }
    z = st.z;

    std::array<double, kSkipDim> h;
    for (int k = 0; k < kHiddenDim; ++k) h[k] = st.z[k];
    for (int k = 0; k < kInputDim; ++k) h[kHiddenDim + k] = st.x[k];
    st.prior = prior_function_layer(h, p, &st.h1);
    st.post = hook(i, st.prior, tau);

    // Arrival propagation: recorded arrival when present, otherwise advance
    // by the expected traversal time under the posterior mean. Gradients do
    // not flow through this chain. Early in training the posterior mean can
    // be nonpositive; the propagation speed is floored so tau stays defined.
    if (i + 1 < route.size() && !arrivals[i + 1]) {
      double speed = std::max(st.post.mu, kMinPropagationSpeed);
      tau = TimeOfWeek::wrap(tau.seconds + seg.length / speed);
    }
  }
  return fwd;
}

/// Gradient of snll(posterior_predictive(post), t) with respect to the four
/// posterior hyperparameters.
struct NormalGammaGrad {
  double mu = 0.0, kappa = 0.0, alpha = 0.0, beta = 0.0;
};

inline NormalGammaGrad snll_grad_wrt_posterior(const NormalGamma& post, double t) {
  const double nu = 2.0 * post.alpha;
  const double loc = post.mu;
  const double scale =
      std::sqrt(post.beta * (post.kappa + 1.0) / (post.alpha * post.kappa));
  const double q = (t - loc) / scale;
  const double q2 = q * q;

  // logpdf partials in (nu, loc, scale)
  const double dlp_dloc = (nu + 1.0) * (t - loc) / (scale * scale * (nu + q2));
  const double dlp_dscale = -1.0 / scale + (nu + 1.0) * q2 / (scale * (nu + q2));
  const double dlp_dnu = 0.5 * digamma(0.5 * (nu + 1.0)) - 0.5 * digamma(0.5 * nu) -
                         0.5 / nu - 0.5 * std::log1p(q2 / nu) +
                         0.5 * (nu + 1.0) * q2 / (nu * (nu + q2));

  const double ds_dalpha = -0.5 * scale / post.alpha;
  const double ds_dbeta = 0.5 * scale / post.beta;
  const double ds_dkappa =
      0.5 * scale * (1.0 / (post.kappa + 1.0) - 1.0 / post.kappa);

  NormalGammaGrad g;
  g.mu = -dlp_dloc;
  g.alpha = -(dlp_dnu * 2.0 + dlp_dscale * ds_dalpha);
  g.beta = -dlp_dscale * ds_dbeta;
  g.kappa = -dlp_dscale * ds_dkappa;
  return g;
}

/// Chain a posterior-hyperparameter gradient back to the prior, holding the
/// record sample statistics constant.
inline NormalGammaGrad chain_posterior_to_prior(const NormalGammaGrad& g,
                                                const NormalGamma& prior,
                                                const SampleStats& stats) {
  if (stats.m == 0) return g;
  const double m = static_cast<double>(stats.m);
  const double k0 = prior.kappa;
  const double km = k0 + m;
  const double d = stats.mean - prior.mu;

  NormalGammaGrad out;
  out.mu = g.mu * (k0 / km) + g.beta * (-k0 * m * d / km);
  out.kappa = g.mu * (-m * d / (km * km)) + g.kappa +
              g.beta * (0.5 * m * m * d * d / (km * km));
  out.alpha = g.alpha;
  out.beta = g.beta;
  return out;
}

/// Reverse pass over a forward tape. For each step, per_step_grad supplies
/// the loss gradient with respect to that step's posterior hyperparameters
/// and its SampleStats (held constant); the pass accumulates parameter
/// gradients into grad (same flat layout as ModelParams::w).
inline void backward_route(const RouteForward& fwd, const ModelParams& p,
                           const std::vector<NormalGammaGrad>& post_grads,
                           const std::vector<SampleStats>& stats,
                           std::vector<double>& grad) {
  if (grad.size() != ModelParams::param_count) {
    throw NumericError("backward_route: gradient buffer size mismatch");
  }
  const size_t n = fwd.steps.size();
  std::array<double, kHiddenDim> dz{};  // gradient flowing into z_i from the future

  for (size_t ii = n; ii-- > 0;) {
    const StepCache& st = fwd.steps[ii];

    NormalGammaGrad gprior = chain_posterior_to_prior(post_grads[ii], st.prior, stats[ii]);

    // prior layer constraints
    std::array<double, kPriorOut> dh1;
    dh1[0] = gprior.mu;
    dh1[1] = gprior.kappa * elu_grad(st.h1[1], p.a);
    auto sign = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
    dh1[2] = gprior.alpha * sign(st.h1[2]);
    dh1[3] = gprior.beta * sign(st.h1[3]);

    // projection: h1[j] = sum_k h[k] * W_out[k,j]
    std::array<double, kSkipDim> dh{};
    {
      std::array<double, kSkipDim> h;
      for (int k = 0; k < kHiddenDim; ++k) h[k] = st.z[k];
      for (int k = 0; k < kInputDim; ++k) h[kHiddenDim + k] = st.x[k];
      const double* W = p.out_w();
      double* gW = grad.data() + ModelParams::off_out;
      for (int k = 0; k < kSkipDim; ++k) {
        double acc = 0.0;
        for (int j = 0; j < kPriorOut; ++j) {
          gW[k * kPriorOut + j] += h[k] * dh1[j];
          acc += W[k * kPriorOut + j] * dh1[j];
        }
        dh[k] = acc;
      }
    }

    // skip split plus recurrent gradient
    std::array<double, kHiddenDim> dzi;
    for (int k = 0; k < kHiddenDim; ++k) dzi[k] = dh[k] + dz[k];
    std::array<double, kInputDim> dx;
    for (int k = 0; k < kInputDim; ++k) dx[k] = dh[kHiddenDim + k];

    // GRU cell backward: z = u.*z_prev + (1-u).*n
    std::array<double, kHiddenDim> du_pre, dr_pre, dn_pre, dz_prev{};
    {
      std::array<double, kHiddenDim> dn, dgated;
      for (int o = 0; o < kHiddenDim; ++o) {
        double du = dzi[o] * (st.z_prev[o] - st.n[o]);
        dn[o] = dzi[o] * (1.0 - st.u[o]);
        dz_prev[o] = dzi[o] * st.u[o];
        du_pre[o] = du * st.u[o] * (1.0 - st.u[o]);
        dn_pre[o] = dn[o] * (1.0 - st.n[o] * st.n[o]);
      }
      // candidate gate: n = tanh(W_n x + U_n (r.*z_prev) + b_n)
      const double* Un = p.gru_u(2);
      for (int k = 0; k < kHiddenDim; ++k) {
        double acc = 0.0;
        for (int o = 0; o < kHiddenDim; ++o) acc += Un[size_t(o) * kHiddenDim + k] * dn_pre[o];
        dgated[k] = acc;
      }
      for (int o = 0; o < kHiddenDim; ++o) {
        double dr = dgated[o] * st.z_prev[o];
        dz_prev[o] += dgated[o] * st.r[o];
        dr_pre[o] = dr * st.r[o] * (1.0 - st.r[o]);
      }
    }

    // For the candidate gate the hidden input is r.*z_prev; its U-path
    // gradient into z_prev is already accounted for through dgated above,
    // so only the update/reset gates propagate into dz_prev here.
    auto accum_gate = [&](int gate, const std::array<double, kHiddenDim>& dpre,
                          const std::array<double, kHiddenDim>& hidden_in,
                          bool propagate_hidden) {
      size_t off = ModelParams::off_gru + gate * ModelParams::gate_size;
      double* gWx = grad.data() + off;
      double* gU = gWx + ModelParams::gate_w;
      double* gb = gU + ModelParams::gate_u;
      const double* W = p.gru_w(gate);
      const double* U = p.gru_u(gate);
      for (int o = 0; o < kHiddenDim; ++o) {
        const double g = dpre[o];
        if (g == 0.0) continue;
        double* gWo = gWx + size_t(o) * kInputDim;
        double* gUo = gU + size_t(o) * kHiddenDim;
        for (int k = 0; k < kInputDim; ++k) gWo[k] += g * st.x[k];
        for (int k = 0; k < kHiddenDim; ++k) gUo[k] += g * hidden_in[k];
        gb[o] += g;
      }
      for (int k = 0; k < kInputDim; ++k) {
        double acc = 0.0;
        for (int o = 0; o < kHiddenDim; ++o) acc += W[size_t(o) * kInputDim + k] * dpre[o];
        dx[k] += acc;
      }
      if (propagate_hidden) {
        for (int k = 0; k < kHiddenDim; ++k) {
          double acc = 0.0;
          for (int o = 0; o < kHiddenDim; ++o)
            acc += U[size_t(o) * kHiddenDim + k] * dpre[o];
          dz_prev[k] += acc;
        }
      }
    };
    std::array<double, kHiddenDim> gated;
    for (int o = 0; o < kHiddenDim; ++o) gated[o] = st.r[o] * st.z_prev[o];
    accum_gate(0, du_pre, st.z_prev, true);
    accum_gate(1, dr_pre, st.z_prev, true);
    accum_gate(2, dn_pre, gated, false);

    // embedding rows (segment features are constants)
    {
      double* gtod = grad.data() + ModelParams::off_tod + size_t(st.tod_row) * kEmbedDim;
      double* gdow = grad.data() + ModelParams::off_dow + size_t(st.dow_row) * kEmbedDim;
      for (int k = 0; k < kEmbedDim; ++k) gtod[k] += dx[kSegmentFeatures + k];
      for (int k = 0; k < kEmbedDim; ++k) gdow[k] += dx[kSegmentFeatures + kEmbedDim + k];
    }

    dz = dz_prev;
  }
}

// ---------------------------------------------------------------------------
// ADAM

struct AdamState {
  std::vector<double> m = std::vector<double>(ModelParams::param_count, 0.0);
  std::vector<double> v = std::vector<double>(ModelParams::param_count, 0.0);
  long t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double stabilizer = 1e-8;
};

inline void adam_step(ModelParams& params, const std::vector<double>& grads,
                      AdamState& state, double lr) {
  if (grads.size() != params.w.size()) throw NumericError("adam_step: shape mismatch");
  state.t += 1;
  const double c1 = 1.0 - std::pow(state.beta1, state.t);
  const double c2 = 1.0 - std::pow(state.beta2, state.t);
  for (size_t i = 0; i < params.w.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params.w[i] -= lr * mhat / (std::sqrt(vhat) + state.stabilizer);
  }
}

// ---------------------------------------------------------------------------
// Checkpoint format (text, versioned)

inline void save_model(std::ostream& out, const ModelParams& p,
                       const std::string& config_hash = "") {
  out << "UNITEMODEL1\n";
  out << kTodRows << ' ' << kDowRows << ' ' << kEmbedDim << ' ' << kInputDim << ' '
      << kHiddenDim << '\n';
  out << "config " << (config_hash.empty() ? "-" : config_hash) << '\n';
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  out << num(p.a) << ' ' << num(p.epsilon) << '\n';
  for (double v : p.feat_mean) out << num(v) << ' ';
  out << '\n';
  for (double v : p.feat_scale) out << num(v) << ' ';
  out << '\n';
  out << p.w.size() << '\n';
  for (double v : p.w) out << num(v) << '\n';
}

inline ModelParams load_model(std::istream& in) {
  std::string magic;
  in >> magic;
  if (magic != "UNITEMODEL1") throw DataError("model checkpoint: bad magic");
  int tod, dow, emb, input, hidden;
  in >> tod >> dow >> emb >> input >> hidden;
  if (tod != kTodRows || dow != kDowRows || emb != kEmbedDim || input != kInputDim ||
      hidden != kHiddenDim) {
    throw DataError("model checkpoint: shape mismatch");
  }
  std::string kw, hash;
  in >> kw >> hash;
  ModelParams p;
  in >> p.a >> p.epsilon;
  for (double& v : p.feat_mean) in >> v;
  for (double& v : p.feat_scale) in >> v;
  size_t n;
  in >> n;
  if (n != ModelParams::param_count) throw DataError("model checkpoint: shape mismatch");
  for (double& v : p.w) in >> v;
  if (!in) throw DataError("model checkpoint: truncated");
  return p;
}

inline void save_model(const std::string& path, const ModelParams& p,
                       const std::string& config_hash = "") {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write model checkpoint: " + path);
  save_model(out, p, config_hash);
}

inline ModelParams load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open model checkpoint: " + path);
  return load_model(in);
}

/// Per-feature standardization constants from a training split.
inline void fit_feature_scaling(ModelParams& p, const RoadNetwork& net,
                                const std::vector<Trajectory>& train) {
  std::array<double, kSegmentFeatures> sum{}, sum2{};
  size_t n = 0;
  for (const auto& tj : train) {
    for (const auto& tr : tj.traversals) {
      const auto& f = net.segment(tr.segment).features;
      for (int k = 0; k < kSegmentFeatures; ++k) {
        sum[k] += f[k];
        sum2[k] += f[k] * f[k];
      }
      ++n;
    }
  }
  if (n == 0) return;
  for (int k = 0; k < kSegmentFeatures; ++k) {
    p.feat_mean[k] = sum[k] / n;
    double var = sum2[k] / n - p.feat_mean[k] * p.feat_mean[k];
    p.feat_scale[k] = var > 1e-12 ? std::sqrt(var) : 1.0;
  }
}

}  // namespace unite

#endif  // UNITE_NEURAL_HPP
