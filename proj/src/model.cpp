#include "drpo/model.hpp"

#include <cmath>
#include <string>

#include "drpo/error.hpp"

namespace drpo {

namespace {

/// Activations of every layer for one forward pass; layer_out[0] is the input.
struct ForwardTrace {
  std::vector<Vec> layer_out;
};

double activate(Activation a, double x) {
  return a == Activation::tanh ? std::tanh(x) : (x > 0.0 ? x : 0.0);
}

/// Derivative expressed through the activation output.
double activate_grad(Activation a, double out) {
  return a == Activation::tanh ? 1.0 - out * out : (out > 0.0 ? 1.0 : 0.0);
}

Vec build_input(ConstSpan y, int t, ConstSpan prompt_embed) {
  Vec input(y.begin(), y.end());
  const Vec tf = time_features(t);
  input.insert(input.end(), tf.begin(), tf.end());
  input.insert(input.end(), prompt_embed.begin(), prompt_embed.end());
  return input;
}

ForwardTrace forward(const DenoiserParams& p, Vec input) {
  if (input.size() != p.input_dim()) {
    throw Error(ErrorCode::dimension_mismatch,
                "denoiser input has " + std::to_string(input.size()) + " entries, arch expects " +
                    std::to_string(p.input_dim()));
  }
  ForwardTrace tr;
  tr.layer_out.reserve(p.arch.size());
  tr.layer_out.push_back(std::move(input));
  const double* w = p.theta.data();
  const std::size_t layers = p.arch.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = p.arch[l];
    const std::size_t out = p.arch[l + 1];
    const double* b = w + in * out;
    const Vec& x = tr.layer_out.back();
    Vec h(out);
    for (std::size_t r = 0; r < out; ++r) {
      double acc = b[r];
      const double* row = w + r * in;
      for (std::size_t c = 0; c < in; ++c) acc += row[c] * x[c];
      h[r] = l + 1 < layers ? activate(p.activation, acc) : acc;
    }
    tr.layer_out.push_back(std::move(h));
    w = b + out;
  }
  return tr;
}

/// Accumulates d(output . upstream)/d theta into grad.
void backward(const DenoiserParams& p, const ForwardTrace& tr, Vec upstream, Vec& grad) {
  const std::size_t layers = p.arch.size() - 1;
  // Offsets of each layer's block in theta.
  std::vector<std::size_t> offset(layers);
  std::size_t pos = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    offset[l] = pos;
    pos += p.arch[l] * p.arch[l + 1] + p.arch[l + 1];
  }
  for (std::size_t l = layers; l-- > 0;) {
    const std::size_t in = p.arch[l];
    const std::size_t out = p.arch[l + 1];
    if (l + 1 < layers) {
      const Vec& h = tr.layer_out[l + 1];
      for (std::size_t r = 0; r < out; ++r) upstream[r] *= activate_grad(p.activation, h[r]);
    }
    const Vec& x = tr.layer_out[l];
    const double* w = p.theta.data() + offset[l];
    double* gw = grad.data() + offset[l];
    double* gb = gw + in * out;
    Vec down(in, 0.0);
    for (std::size_t r = 0; r < out; ++r) {
      const double u = upstream[r];
      if (u == 0.0) continue;
      gb[r] += u;
      double* grow = gw + r * in;
      const double* wrow = w + r * in;
      for (std::size_t c = 0; c < in; ++c) {
        grow[c] += u * x[c];
        down[c] += u * wrow[c];
      }
    }
    upstream = std::move(down);
  }
}

void check_step(int t, const DiffusionSchedule& s) {
  if (t < 0 || t > s.steps()) {
    throw Error(ErrorCode::timestep_out_of_range,
                "denoiser timestep " + std::to_string(t) + " outside [0, " +
                    std::to_string(s.steps()) + "]");
  }
}

double squared_error(ConstSpan a, ConstSpan b) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    acc += d * d;
  }
  return acc;
}

/// Noisy input, regression target, and forward traces for one side of a pair.
struct SideEval {
  int step = 0;
  Vec target;
  ForwardTrace theta_trace;
  double mse_theta = 0.0;
  double mse_ref = 0.0;
};

}  // namespace

std::string_view to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  throw Error(ErrorCode::invalid_arch, "unknown activation '" + std::string(name) + "'");
}

std::string_view to_string(LogProbVariant v) {
  return v == LogProbVariant::posterior_mean ? "posterior_mean" : "sampled";
}

LogProbVariant parse_logprob_variant(std::string_view name) {
  if (name == "posterior_mean") return LogProbVariant::posterior_mean;
  if (name == "sampled") return LogProbVariant::sampled;
  throw Error(ErrorCode::config_error, "unknown log-probability variant '" + std::string(name) + "'");
}

std::size_t parameter_count(std::span<const std::size_t> arch) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < arch.size(); ++l) n += arch[l] * arch[l + 1] + arch[l + 1];
  return n;
}

void DenoiserParams::validate() const {
  if (arch.size() < 2) throw Error(ErrorCode::invalid_arch, "architecture needs >= 2 layer sizes");
  for (auto n : arch) {
    if (n == 0) throw Error(ErrorCode::invalid_arch, "layer sizes must be positive");
  }
  if (theta.size() != parameter_count(arch)) {
    throw Error(ErrorCode::shape_mismatch,
                "theta has " + std::to_string(theta.size()) + " entries, arch implies " +
                    std::to_string(parameter_count(arch)));
  }
  for (double v : theta) {
    if (!std::isfinite(v)) throw Error(ErrorCode::invalid_range, "non-finite parameter");
  }
}

std::vector<std::size_t> denoiser_arch(std::size_t sample_dim, std::size_t prompt_dim,
                                       std::span<const std::size_t> hidden) {
  std::vector<std::size_t> arch{sample_dim + kTimeFeatureDim + prompt_dim};
  arch.insert(arch.end(), hidden.begin(), hidden.end());
  arch.push_back(sample_dim);
  return arch;
}

DenoiserParams init_params(std::vector<std::size_t> arch, std::uint64_t seed,
                           Activation activation) {
  if (arch.size() < 2) throw Error(ErrorCode::invalid_arch, "architecture needs >= 2 layer sizes");
  for (auto n : arch) {
    if (n == 0) throw Error(ErrorCode::invalid_arch, "layer sizes must be positive");
  }
  if (arch.front() <= kTimeFeatureDim) {
    throw Error(ErrorCode::invalid_arch, "input layer must hold the sample plus time features");
  }
  DenoiserParams p{std::move(arch), activation, {}};
  p.theta.assign(parameter_count(p.arch), 0.0);
  Rng rng(seed);
  std::size_t pos = 0;
  for (std::size_t l = 0; l + 1 < p.arch.size(); ++l) {
    const std::size_t in = p.arch[l];
    const std::size_t out = p.arch[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t k = 0; k < in * out; ++k) p.theta[pos + k] = dist(rng);
    pos += in * out + out;
  }
  return p;
}

Vec time_features(int t) {
  constexpr std::size_t half = kTimeFeatureDim / 2;
  Vec f(kTimeFeatureDim);
  for (std::size_t k = 0; k < half; ++k) {
    const double freq = std::pow(1000.0, -static_cast<double>(k) / static_cast<double>(half));
    const double angle = static_cast<double>(t) * freq;
    f[k] = std::sin(angle);
    f[half + k] = std::cos(angle);
  }
  return f;
}

Vec denoise(const DenoiserParams& p, ConstSpan y, int t, ConstSpan prompt_embed,
            const DiffusionSchedule& s) {
  check_step(t, s);
  if (y.size() != p.output_dim()) {
    throw Error(ErrorCode::dimension_mismatch, "sample dimension does not match denoiser output");
  }
  return forward(p, build_input(y, t, prompt_embed)).layer_out.back();
}

LossGradient loss_gradient(const DenoiserParams& p, const DenoiserParams& p_ref,
                           std::span<const PreferencePair> minibatch, const WeightMatrix& w,
                           const DiffusionSchedule& s, const LossConfig& cfg, LossKind kind,
                           Rng& rng, const GradientOptions& options, NoiseTrace* trace) {
  if (minibatch.empty()) throw Error(ErrorCode::empty_batch, "empty minibatch");
  if (p.arch != p_ref.arch || p.theta.size() != p_ref.theta.size()) {
    throw Error(ErrorCode::shape_mismatch, "policy and reference architectures differ");
  }
  const std::size_t m = minibatch.size();
  const std::size_t d = p.output_dim();
  const bool relative = kind == LossKind::rpo || kind == LossKind::orrpo;
  if (relative && w.size() != m) {
    throw Error(ErrorCode::dimension_mismatch, "weight matrix does not match minibatch size");
  }
  for (const auto& pair : minibatch) {
    if (pair.y_w.size() != d || pair.y_l.size() != d) {
      throw Error(ErrorCode::dimension_mismatch, "pair sample dimension does not match denoiser");
    }
  }

  // Random draws, in the documented order.
  std::vector<int> steps_w(m), steps_l(m);
  if (options.per_pair_timestep) {
    for (auto& t : steps_w) t = sample_timestep(rng, s.steps());
    for (auto& t : steps_l) t = sample_timestep(rng, s.steps());
  } else {
    const int t = sample_timestep(rng, s.steps());
    steps_w.assign(m, t);
    steps_l.assign(m, t);
  }
  std::vector<Vec> eps_w(m), eps_l(m);
  for (auto& e : eps_w) e = standard_normal(rng, d);
  for (auto& e : eps_l) e = standard_normal(rng, d);
  std::vector<Vec> extra_w, extra_l;
  if (options.variant == LogProbVariant::sampled) {
    for (std::size_t i = 0; i < m; ++i) extra_w.push_back(standard_normal(rng, d));
    for (std::size_t j = 0; j < m; ++j) extra_l.push_back(standard_normal(rng, d));
  }

  auto evaluate_side = [&](ConstSpan y0, int t, const Vec& eps, const Vec* extra,
                           ConstSpan prompt) {
    SideEval side;
    side.step = t;
    const NoisySample noisy = marginal_sample(s, y0, t, eps);
    side.target = eps;
    if (extra != nullptr) {
      // || eps_theta - eps + sigma * eps_t ||^2 = || eps_theta - (eps - sigma * eps_t) ||^2
      const double sigma = s.sigma(t + 1);
      for (std::size_t k = 0; k < d; ++k) side.target[k] -= sigma * (*extra)[k];
    }
    Vec input = build_input(noisy.value, noisy.timestep, prompt);
    side.theta_trace = forward(p, input);
    const ForwardTrace ref_trace = forward(p_ref, std::move(input));
    side.mse_theta = squared_error(side.theta_trace.layer_out.back(), side.target);
    side.mse_ref = squared_error(ref_trace.layer_out.back(), side.target);
    return side;
  };

  std::vector<SideEval> winners, losers;
  winners.reserve(m);
  losers.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto& pair = minibatch[i];
    winners.push_back(evaluate_side(pair.y_w, steps_w[i], eps_w[i],
                                    extra_w.empty() ? nullptr : &extra_w[i], pair.prompt_features));
  }
  for (std::size_t j = 0; j < m; ++j) {
    const auto& pair = minibatch[j];
    losers.push_back(evaluate_side(pair.y_l, steps_l[j], eps_l[j],
                                   extra_l.empty() ? nullptr : &extra_l[j], pair.prompt_features));
  }

  if (trace != nullptr) {
    *trace = NoiseTrace{};
    for (const auto& side : winners) {
      trace->winner_steps.push_back(side.step);
      trace->theta_targets_w.push_back(side.target);
      trace->ref_targets_w.push_back(side.target);
    }
    for (const auto& side : losers) {
      trace->loser_steps.push_back(side.step);
      trace->theta_targets_l.push_back(side.target);
      trace->ref_targets_l.push_back(side.target);
    }
  }

  Vec theta_w(m), ref_w(m), theta_l(m), ref_l(m);
  for (std::size_t i = 0; i < m; ++i) {
    theta_w[i] = winners[i].mse_theta;
    ref_w[i] = winners[i].mse_ref;
    theta_l[i] = losers[i].mse_theta;
    ref_l[i] = losers[i].mse_ref;
  }

  // dL/d mse_theta per winner row and per loser column.
  Vec coef_w(m, 0.0), coef_l(m, 0.0);
  LossGradient result;
  switch (kind) {
    case LossKind::rpo:
    case LossKind::orrpo: {
      const ErrorGrid grid = ErrorGrid::from_samples(theta_w, ref_w, theta_l, ref_l);
      const LossEval eval = kind == LossKind::rpo ? diffusion_rpo_loss_eval(grid, w, cfg)
                                                  : orrpo_loss_eval(grid, w, cfg);
      result.loss = eval.value;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
          coef_w[i] += eval.partials[i * m + j].mse_theta_w;
          coef_l[j] += eval.partials[i * m + j].mse_theta_l;
        }
      }
      break;
    }
    case LossKind::dpo:
    case LossKind::orpo: {
      std::vector<PairErrors> diag(m);
      for (std::size_t i = 0; i < m; ++i) diag[i] = {theta_w[i], ref_w[i], theta_l[i], ref_l[i]};
      const LossEval eval = kind == LossKind::dpo ? diffusion_dpo_loss_eval(diag, cfg)
                                                  : orpo_loss_eval(diag, cfg);
      result.loss = eval.value;
      for (std::size_t i = 0; i < m; ++i) {
        coef_w[i] = eval.partials[i].mse_theta_w;
        coef_l[i] = eval.partials[i].mse_theta_l;
      }
      break;
    }
    case LossKind::sft:
      result.loss = sft_loss(theta_w);
      coef_w.assign(m, 1.0 / static_cast<double>(m));
      break;
  }

  result.grad.assign(p.theta.size(), 0.0);
  auto backprop_side = [&](const SideEval& side, double coef) {
    if (coef == 0.0) return;
    const Vec& out = side.theta_trace.layer_out.back();
    Vec upstream(d);
    for (std::size_t k = 0; k < d; ++k) upstream[k] = 2.0 * coef * (out[k] - side.target[k]);
    backward(p, side.theta_trace, std::move(upstream), result.grad);
  };
  for (std::size_t i = 0; i < m; ++i) backprop_side(winners[i], coef_w[i]);
  for (std::size_t j = 0; j < m; ++j) backprop_side(losers[j], coef_l[j]);

  std::size_t correct = 0;
  for (std::size_t i = 0; i < m; ++i) {
    result.stats.mean_winner_mse += theta_w[i];
    result.stats.mean_loser_mse += theta_l[i];
    if (rpo_inner({theta_w[i], ref_w[i], theta_l[i], ref_l[i]}, cfg.beta) > 0.0) ++correct;
  }
  result.stats.mean_winner_mse /= static_cast<double>(m);
  result.stats.mean_loser_mse /= static_cast<double>(m);
  result.stats.implicit_accuracy = static_cast<double>(correct) / static_cast<double>(m);
  return result;
}

OptimizerState OptimizerState::zeros(std::size_t n, double lr, double weight_decay) {
  OptimizerState st;
  st.first_moment.assign(n, 0.0);
  st.second_moment.assign(n, 0.0);
  st.lr = lr;
  st.weight_decay = weight_decay;
  return st;
}

std::pair<DenoiserParams, OptimizerState> optimizer_step(DenoiserParams p, ConstSpan grad,
                                                         OptimizerState st) {
  const std::size_t n = p.theta.size();
  if (grad.size() != n || st.first_moment.size() != n || st.second_moment.size() != n) {
    throw Error(ErrorCode::shape_mismatch, "gradient / moment sizes do not match parameters");
  }
  ++st.step_count;
  const double steps = static_cast<double>(st.step_count);
  const double correction1 = 1.0 - std::pow(st.beta1, steps);
  const double correction2 = 1.0 - std::pow(st.beta2, steps);
  for (std::size_t k = 0; k < n; ++k) {
    const double g = grad[k];
    st.first_moment[k] = st.beta1 * st.first_moment[k] + (1.0 - st.beta1) * g;
    st.second_moment[k] = st.beta2 * st.second_moment[k] + (1.0 - st.beta2) * g * g;
    const double m_hat = st.first_moment[k] / correction1;
    const double v_hat = st.second_moment[k] / correction2;
    p.theta[k] -= st.lr * st.weight_decay * p.theta[k];
    p.theta[k] -= st.lr * m_hat / (std::sqrt(v_hat) + st.epsilon);
  }
  return {std::move(p), std::move(st)};
}

}  // namespace drpo
