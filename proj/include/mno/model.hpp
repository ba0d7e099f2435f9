#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mno/autodiff.hpp"
#include "mno/dataset.hpp"
#include "mno/optim.hpp"
#include "mno/rng.hpp"
#include "mno/serialize.hpp"
#include "mno/tensor.hpp"

namespace mno::op {

struct FnoConfig {
  int width = 48;
  int modes = 16;
  int layers = 4;
  std::string activation = "gelu_tanh";

  void validate() const {
    if (width < 1 || layers < 1 || modes < 1) throw ConfigError("fno: width, modes, layers must be >= 1");
    if (activation != "gelu_tanh") throw ConfigError("fno: unsupported activation " + activation);
  }
};

struct ModelConfig {
  FnoConfig fno;
  int rank = 16;
  int channels = 1;
  bool shared_backbone = true;
  double t_scale = 0.5;           // time-channel unit; query times enter as t / t_scale
  double gate_alpha_init = 5.0;
  double factor_init_std = 0.05;  // scale of the factor head's final projection

  void validate() const {
    fno.validate();
    if (rank < 1 || channels < 1) throw ConfigError("model: rank and channels must be >= 1");
    if (t_scale <= 0.0) throw ConfigError("model: t_scale must be positive");
  }

  Json to_json() const {
    Json j;
    j["width"] = fno.width;
    j["modes"] = fno.modes;
    j["layers"] = fno.layers;
    j["activation"] = fno.activation;
    j["rank"] = rank;
    j["channels"] = channels;
    j["shared_backbone"] = shared_backbone;
    j["t_scale"] = t_scale;
    j["gate_alpha_init"] = gate_alpha_init;
    j["factor_init_std"] = factor_init_std;
    return j;
  }

  static ModelConfig from_json(const Json& j) {
    ModelConfig c;
    c.fno.width = j.at("width").get<int>();
    c.fno.modes = j.at("modes").get<int>();
    c.fno.layers = j.at("layers").get<int>();
    c.fno.activation = j.at("activation").get<std::string>();
    c.rank = j.at("rank").get<int>();
    c.channels = j.at("channels").get<int>();
    c.shared_backbone = j.at("shared_backbone").get<bool>();
    c.t_scale = j.at("t_scale").get<double>();
    c.gate_alpha_init = j.at("gate_alpha_init").get<double>();
    c.factor_init_std = j.at("factor_init_std").get<double>();
    c.validate();
    return c;
  }
};

// All learned state: backbone(s), the two projection heads, and the gate
// rate. Training statistics ride along so checkpoints are self-contained.
struct MnoModel {
  ModelConfig cfg;
  ParamSet params;
  sim::NormStats norm;  // stats of the training data; empty until trained
};

namespace model_detail {

inline void add_backbone(ParamSet& p, const std::string& prefix, const ModelConfig& cfg,
                         RngStream& rng) {
  const int w = cfg.fno.width;
  const int cin = cfg.channels + 1;  // input plus constant time channel
  p.add(prefix + ".lift.w", rng.gauss_tensor(Shape{w, cin}, 1.0 / std::sqrt(cin)));
  p.add(prefix + ".lift.b", Tensor::zeros(Shape{w}));
  const double spec_scale = 1.0 / (static_cast<double>(w) * cfg.fno.modes);
  for (int l = 0; l < cfg.fno.layers; ++l) {
    std::string lp = prefix + ".layer" + std::to_string(l);
    p.add(lp + ".spec", rng.gauss_tensor(Shape{w, w, cfg.fno.modes, 2}, spec_scale));
    p.add(lp + ".mix.w", rng.gauss_tensor(Shape{w, w}, 1.0 / std::sqrt(w)));
    p.add(lp + ".mix.b", Tensor::zeros(Shape{w}));
  }
}

inline void add_head(ParamSet& p, const std::string& prefix, int width, int out_channels,
                     double out_std, RngStream& rng) {
  p.add(prefix + ".h1.w", rng.gauss_tensor(Shape{width, width}, 1.0 / std::sqrt(width)));
  p.add(prefix + ".h1.b", Tensor::zeros(Shape{width}));
  if (out_std > 0.0)
    p.add(prefix + ".out.w",
          rng.gauss_tensor(Shape{out_channels, width}, out_std / std::sqrt(width)));
  else
    p.add(prefix + ".out.w", Tensor::zeros(Shape{out_channels, width}));
  p.add(prefix + ".out.b", Tensor::zeros(Shape{out_channels}));
}

}  // namespace model_detail

// The drift head's final projection starts at zero so the mean map begins
// as the identity. The factor head's final projection starts small but
// nonzero: every loss term reaches B only through B^T B, so an exactly zero
// factor is a stationary point that gradient descent cannot leave.
inline MnoModel init_mno(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  MnoModel m;
  m.cfg = cfg;
  RngStream rng = make_stream(seed, 0x90dULL);
  if (cfg.shared_backbone) {
    model_detail::add_backbone(m.params, "bb", cfg, rng);
  } else {
    model_detail::add_backbone(m.params, "drift_bb", cfg, rng);
    model_detail::add_backbone(m.params, "factor_bb", cfg, rng);
  }
  model_detail::add_head(m.params, "drift", cfg.fno.width, cfg.channels, 0.0, rng);
  model_detail::add_head(m.params, "factor", cfg.fno.width, cfg.rank * cfg.channels,
                         cfg.factor_init_std, rng);
  m.params.add("gate.alpha", Tensor(Shape{1}, std::vector<double>{cfg.gate_alpha_init}));
  return m;
}

// Forces a head's output projection to zero. Used by tests of the
// zero-head contract and by the zero-variance ablation, which keeps the
// drift weights and removes the stochastic factor.
inline void zero_head_projection(MnoModel& m, const std::string& head) {
  Tensor& w = m.params.get(head + ".out.w");
  Tensor& b = m.params.get(head + ".out.b");
  std::fill(w.data.begin(), w.data.end(), 0.0);
  std::fill(b.data.begin(), b.data.end(), 0.0);
}

inline double gate_eval(double alpha, double t) {
  if (t < 0.0) throw Error("gate_eval: negative time");
  return 1.0 - std::exp(-std::abs(alpha) * t);
}

// Conditional moment output of one forward pass: mean field, rank-r factor
// field, and the gate value it was produced with.
struct MomentPrediction {
  Tensor mean;    // [C, N]
  Tensor factor;  // [r, C, N]
  double gate = 0.0;
};

using ParamNodes = std::map<std::string, int>;

inline ParamNodes register_params(Tape& tape, const ParamSet& params, bool requires_grad) {
  ParamNodes ids;
  for (const auto& [name, t] : params.items) ids[name] = tape.leaf(t, requires_grad);
  return ids;
}

struct TapedForward {
  int mean = -1;      // [B, C, N]
  int drift = -1;     // gated drift increment [B, C, N]
  int factor = -1;    // gated factor [B, r, C, N]
  int variance = -1;  // raw variance field sum_k B_k^2, [B, C, N]
  int gate = -1;      // [1]
};

namespace model_detail {

inline int run_backbone(Tape& tape, const ParamNodes& ids, const std::string& prefix,
                        const ModelConfig& cfg, int input) {
  int h = tape.linear_channels(input, ids.at(prefix + ".lift.w"), ids.at(prefix + ".lift.b"));
  for (int l = 0; l < cfg.fno.layers; ++l) {
    std::string lp = prefix + ".layer" + std::to_string(l);
    int s = tape.spectral_conv(h, ids.at(lp + ".spec"));
    int w = tape.linear_channels(h, ids.at(lp + ".mix.w"), ids.at(lp + ".mix.b"));
    h = tape.add(s, w);
    if (l + 1 < cfg.fno.layers) h = tape.gelu(h);
  }
  return h;
}

inline int run_head(Tape& tape, const ParamNodes& ids, const std::string& prefix, int h) {
  int a = tape.gelu(tape.linear_channels(h, ids.at(prefix + ".h1.w"), ids.at(prefix + ".h1.b")));
  return tape.linear_channels(a, ids.at(prefix + ".out.w"), ids.at(prefix + ".out.b"));
}

}  // namespace model_detail

// Records the full forward pass on the caller's tape. u0 enters in the
// model's normalized coordinates, shaped [B, C, N].
inline TapedForward mno_forward_taped(Tape& tape, const MnoModel& m, const ParamNodes& ids,
                                      const Tensor& u0, double t) {
  if (t < 0.0) throw Error("mno_forward: negative query time");
  if (u0.rank() != 3 || u0.dim(1) != m.cfg.channels) throw Error("mno_forward: expected u0 [B,C,N]");
  ensure_finite(u0, "mno_forward input");
  const int64_t B = u0.dim(0), C = u0.dim(1), N = u0.dim(2);
  if (m.cfg.fno.modes > N / 2 + 1)
    throw Error("mno_forward: " + std::to_string(m.cfg.fno.modes) +
                " retained modes exceed capacity " + std::to_string(N / 2 + 1) + " of grid " +
                std::to_string(N));

  Tensor input(Shape{B, C + 1, N});
  const double tch = t / m.cfg.t_scale;
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t c = 0; c < C; ++c)
      for (int64_t j = 0; j < N; ++j) input.at3(b, c, j) = u0.at3(b, c, j);
    for (int64_t j = 0; j < N; ++j) input.at3(b, C, j) = tch;
  }
  int in_id = tape.leaf(input, false);
  int u0_id = tape.leaf(u0, false);

  // gate g = 1 - exp(-|alpha| t)
  int alpha = ids.at("gate.alpha");
  int gate = tape.add_scalar(tape.neg(tape.exp_(tape.mul_scalar(tape.abs_(alpha), -t))), 1.0);

  int h_drift, h_factor;
  if (m.cfg.shared_backbone) {
    int h = model_detail::run_backbone(tape, ids, "bb", m.cfg, in_id);
    h_drift = h;
    h_factor = h;
  } else {
    h_drift = model_detail::run_backbone(tape, ids, "drift_bb", m.cfg, in_id);
    h_factor = model_detail::run_backbone(tape, ids, "factor_bb", m.cfg, in_id);
  }

  TapedForward out;
  out.gate = gate;
  out.drift = tape.scale_by(model_detail::run_head(tape, ids, "drift", h_drift), gate);
  out.mean = tape.add(u0_id, out.drift);
  int factor_flat = tape.scale_by(model_detail::run_head(tape, ids, "factor", h_factor), gate);
  out.factor = tape.reshape(factor_flat, Shape{B, static_cast<int64_t>(m.cfg.rank), C, N});
  out.variance = tape.sum_rank_axis(tape.square(out.factor));
  return out;
}

struct BatchMoments {
  Tensor mean;    // [B, C, N]
  Tensor factor;  // [B, r, C, N]
  double gate = 0.0;

  MomentPrediction item(int64_t b) const {
    const int64_t R = factor.dim(1), C = factor.dim(2), N = factor.dim(3);
    MomentPrediction p;
    p.mean = Tensor(Shape{C, N});
    p.factor = Tensor(Shape{R, C, N});
    std::copy(mean.data.begin() + b * C * N, mean.data.begin() + (b + 1) * C * N,
              p.mean.data.begin());
    std::copy(factor.data.begin() + b * R * C * N, factor.data.begin() + (b + 1) * R * C * N,
              p.factor.data.begin());
    p.gate = gate;
    return p;
  }
};

inline BatchMoments mno_forward_batch(const MnoModel& m, const Tensor& u0, double t) {
  Tape tape;
  ParamNodes ids = register_params(tape, m.params, false);
  TapedForward f = mno_forward_taped(tape, m, ids, u0, t);
  BatchMoments out;
  out.mean = tape.val(f.mean);
  out.factor = tape.val(f.factor);
  out.gate = tape.val(f.gate)[0];
  ensure_finite(out.mean, "forward mean");
  ensure_finite(out.factor, "forward factor");
  return out;
}

inline MomentPrediction mno_forward(const MnoModel& m, const Tensor& u0, double t) {
  if (u0.rank() != 2) throw Error("mno_forward: expected u0 [C,N]");
  Tensor batched(Shape{1, u0.dim(0), u0.dim(1)}, u0.data);
  return mno_forward_batch(m, batched, t).item(0);
}

// Pointwise variance sum_k B_k^2; never materializes an N x N matrix.
inline Tensor variance_from_factor(const Tensor& factor) {
  if (factor.rank() != 3) throw Error("variance_from_factor: expected [r,C,N]");
  const int64_t R = factor.dim(0), C = factor.dim(1), N = factor.dim(2);
  Tensor v(Shape{C, N});
  for (int64_t k = 0; k < R; ++k)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t x = 0; x < N; ++x) {
        double b = factor.at3(k, c, x);
        v.at2(c, x) += b * b;
      }
  return v;
}

// samples[s] = mean + sum_k xi_k B_k with xi ~ N(0, I_r)
inline Tensor sample_terminal(const MomentPrediction& pred, int64_t n_samples, uint64_t seed) {
  if (n_samples < 1) throw Error("sample_terminal: need at least one sample");
  const int64_t R = pred.factor.dim(0), C = pred.factor.dim(1), N = pred.factor.dim(2);
  Tensor out(Shape{n_samples, C, N});
  RngStream rng = make_stream(seed, 0x5a3ULL);
  std::vector<double> xi(static_cast<size_t>(R));
  const int64_t inner = C * N;
  for (int64_t s = 0; s < n_samples; ++s) {
    for (auto& z : xi) z = rng.gauss();
    double* dst = &out.data[static_cast<size_t>(s * inner)];
    const double* mu = pred.mean.data.data();
    for (int64_t i = 0; i < inner; ++i) dst[i] = mu[i];
    for (int64_t k = 0; k < R; ++k) {
      const double z = xi[static_cast<size_t>(k)];
      const double* bk = &pred.factor.data[static_cast<size_t>(k * inner)];
      for (int64_t i = 0; i < inner; ++i) dst[i] += z * bk[i];
    }
  }
  return out;
}

// Gamma v = B^T (B v) on the flattened C*N coordinates.
inline std::vector<double> covariance_matvec(const Tensor& factor, const std::vector<double>& v) {
  if (factor.rank() != 3) throw Error("covariance_matvec: expected factor [r,C,N]");
  const int64_t R = factor.dim(0), inner = factor.dim(1) * factor.dim(2);
  if (static_cast<int64_t>(v.size()) != inner)
    throw Error("covariance_matvec: vector length " + std::to_string(v.size()) +
                " does not match C*N = " + std::to_string(inner));
  std::vector<double> w(static_cast<size_t>(R), 0.0);
  for (int64_t k = 0; k < R; ++k) {
    const double* bk = &factor.data[static_cast<size_t>(k * inner)];
    double s = 0.0;
    for (int64_t i = 0; i < inner; ++i) s += bk[i] * v[static_cast<size_t>(i)];
    w[static_cast<size_t>(k)] = s;
  }
  std::vector<double> out(static_cast<size_t>(inner), 0.0);
  for (int64_t k = 0; k < R; ++k) {
    const double* bk = &factor.data[static_cast<size_t>(k * inner)];
    for (int64_t i = 0; i < inner; ++i) out[static_cast<size_t>(i)] += bk[i] * w[static_cast<size_t>(k)];
  }
  return out;
}

// dense Gram product for small problems and tests
inline Tensor densify_covariance(const Tensor& factor) {
  const int64_t R = factor.dim(0), inner = factor.dim(1) * factor.dim(2);
  if (inner > 4096) throw Error("densify_covariance: C*N too large to densify");
  Tensor g(Shape{inner, inner});
  for (int64_t k = 0; k < R; ++k) {
    const double* bk = &factor.data[static_cast<size_t>(k * inner)];
    for (int64_t i = 0; i < inner; ++i)
      for (int64_t j = 0; j < inner; ++j) g.at2(i, j) += bk[i] * bk[j];
  }
  return g;
}

// ---- MNOCK checkpoint format ----

inline constexpr char kCheckpointMagic[8] = {'M', 'N', 'O', 'C', 'K', 0, 0, 1};

struct Checkpoint {
  MnoModel model;
  Json provenance;
  bool has_optimizer = false;
  int64_t opt_step = 0;
  std::map<std::string, std::pair<Tensor, Tensor>> opt_moments;
};

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path,
                            bool force = false) {
  require_path_writable(path, force);
  Json header;
  header["schema_version"] = 1;
  header["config"] = ck.model.cfg.to_json();
  Json plist = Json::array();
  for (const auto& [name, t] : ck.model.params.items) {
    Json p;
    p["name"] = name;
    p["shape"] = t.shape;
    plist.push_back(p);
  }
  header["params"] = plist;
  header["norm_mean"] = ck.model.norm.mean;
  header["norm_std"] = ck.model.norm.std_dev;
  header["provenance"] = ck.provenance;
  header["has_optimizer"] = ck.has_optimizer;
  header["opt_step"] = ck.opt_step;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write_header(out, kCheckpointMagic, header);
  for (const auto& [name, t] : ck.model.params.items) ser_detail::write_f64(out, t.data);
  if (ck.has_optimizer)
    for (const auto& [name, t] : ck.model.params.items) {
      auto it = ck.opt_moments.find(name);
      if (it == ck.opt_moments.end()) throw Error("checkpoint: missing optimizer moments for " + name);
      ser_detail::write_f64(out, it->second.first.data);
      ser_detail::write_f64(out, it->second.second.data);
    }
  if (!out) throw IoError("write failed: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  Json header = read_header(in, kCheckpointMagic, "MNOCK checkpoint");
  if (header.at("schema_version").get<int>() != 1)
    throw IoError("unsupported checkpoint schema version");
  Checkpoint ck;
  ck.model.cfg = ModelConfig::from_json(header.at("config"));
  for (const auto& p : header.at("params")) {
    Shape s = p.at("shape").get<Shape>();
    ck.model.params.add(p.at("name").get<std::string>(), Tensor(s));
  }
  ck.model.norm.mean = header.at("norm_mean").get<std::vector<double>>();
  ck.model.norm.std_dev = header.at("norm_std").get<std::vector<double>>();
  ck.provenance = header.at("provenance");
  ck.has_optimizer = header.at("has_optimizer").get<bool>();
  ck.opt_step = header.at("opt_step").get<int64_t>();
  for (auto& [name, t] : ck.model.params.items) ser_detail::read_f64(in, t.data);
  if (ck.has_optimizer)
    for (auto& [name, t] : ck.model.params.items) {
      Tensor m(t.shape), v(t.shape);
      ser_detail::read_f64(in, m.data);
      ser_detail::read_f64(in, v.data);
      ck.opt_moments[name] = {std::move(m), std::move(v)};
    }
  return ck;
}

}  // namespace mno::op
