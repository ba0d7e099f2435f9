#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mno/serialize.hpp"
#include "mno/tensor.hpp"

namespace mno::sim {

// Initial conditions paired with per-condition ensembles of terminal
// realizations. u0 is [n_ic, C, N]; uT is [n_ic, n_ens, C, N]. All members
// of uT[i] evolved from exactly u0[i].
struct EnsembleDataset {
  Tensor u0;
  Tensor uT;
  std::vector<double> norm_mean;  // per channel
  std::vector<double> norm_std;   // per channel
  bool normalized = false;
  double horizon = 0.0;   // terminal time the ensembles were evolved to
  double coord_len = 1.0; // physical length of the field coordinate axis
  Json meta;              // generation spec, seed, kind, schema version

  int64_t n_ic() const { return u0.dim(0); }
  int64_t n_ens() const { return uT.dim(1); }
  int64_t channels() const { return u0.dim(1); }
  int64_t grid() const { return u0.dim(2); }

  void validate() const {
    if (u0.rank() != 3 || uT.rank() != 4) throw Error("dataset: bad tensor ranks");
    if (uT.dim(0) != u0.dim(0) || uT.dim(2) != u0.dim(1) || uT.dim(3) != u0.dim(2))
      throw Error("dataset: u0/uT shape mismatch");
    ensure_finite(u0, "dataset u0");
    ensure_finite(uT, "dataset uT");
  }
};

struct NormStats {
  std::vector<double> mean;
  std::vector<double> std_dev;
};

inline NormStats compute_norm_stats(const EnsembleDataset& ds) {
  const int64_t C = ds.channels();
  NormStats st;
  st.mean.assign(static_cast<size_t>(C), 0.0);
  st.std_dev.assign(static_cast<size_t>(C), 0.0);
  const int64_t n_ic = ds.n_ic(), n_ens = ds.n_ens(), N = ds.grid();
  const double count = static_cast<double>(n_ic * n_ens * N);
  for (int64_t i = 0; i < n_ic; ++i)
    for (int64_t e = 0; e < n_ens; ++e)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t x = 0; x < N; ++x) st.mean[static_cast<size_t>(c)] += ds.uT.at4(i, e, c, x);
  for (auto& m : st.mean) m /= count;
  for (int64_t i = 0; i < n_ic; ++i)
    for (int64_t e = 0; e < n_ens; ++e)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t x = 0; x < N; ++x) {
          double d = ds.uT.at4(i, e, c, x) - st.mean[static_cast<size_t>(c)];
          st.std_dev[static_cast<size_t>(c)] += d * d;
        }
  for (auto& s : st.std_dev) {
    s = std::sqrt(s / count);
    if (s <= 0.0) throw NumericError("normalize: zero standard deviation in a target channel");
  }
  return st;
}

// Standardizes targets per channel and maps u0 with the same statistics so
// the whole dataset lives in one coordinate system. Variance fields map back
// to physical units by multiplying with the squared channel std.
inline EnsembleDataset normalize_dataset(const EnsembleDataset& ds, NormStats* out_stats = nullptr) {
  if (ds.normalized) throw Error("normalize_dataset: dataset is already normalized");
  NormStats st = compute_norm_stats(ds);
  EnsembleDataset out = ds;
  const int64_t C = ds.channels(), N = ds.grid();
  for (int64_t i = 0; i < ds.n_ic(); ++i)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t x = 0; x < N; ++x)
        out.u0.at3(i, c, x) =
            (ds.u0.at3(i, c, x) - st.mean[static_cast<size_t>(c)]) / st.std_dev[static_cast<size_t>(c)];
  for (int64_t i = 0; i < ds.n_ic(); ++i)
    for (int64_t e = 0; e < ds.n_ens(); ++e)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t x = 0; x < N; ++x)
          out.uT.at4(i, e, c, x) = (ds.uT.at4(i, e, c, x) - st.mean[static_cast<size_t>(c)]) /
                                   st.std_dev[static_cast<size_t>(c)];
  out.norm_mean = st.mean;
  out.norm_std = st.std_dev;
  out.normalized = true;
  if (out_stats) *out_stats = st;
  return out;
}

// Applies externally supplied statistics (e.g. the training stats stored in
// a checkpoint) instead of the dataset's own.
inline EnsembleDataset normalize_with(const EnsembleDataset& ds, const NormStats& st) {
  if (ds.normalized) throw Error("normalize_with: dataset is already normalized");
  if (static_cast<int64_t>(st.mean.size()) != ds.channels()) throw Error("normalize_with: channel mismatch");
  EnsembleDataset out = ds;
  for (size_t c = 0; c < st.std_dev.size(); ++c)
    if (st.std_dev[c] <= 0.0) throw NumericError("normalize_with: nonpositive std");
  for (int64_t i = 0; i < ds.n_ic(); ++i)
    for (int64_t c = 0; c < ds.channels(); ++c)
      for (int64_t x = 0; x < ds.grid(); ++x)
        out.u0.at3(i, c, x) =
            (ds.u0.at3(i, c, x) - st.mean[static_cast<size_t>(c)]) / st.std_dev[static_cast<size_t>(c)];
  for (int64_t i = 0; i < ds.n_ic(); ++i)
    for (int64_t e = 0; e < ds.n_ens(); ++e)
      for (int64_t c = 0; c < ds.channels(); ++c)
        for (int64_t x = 0; x < ds.grid(); ++x)
          out.uT.at4(i, e, c, x) = (ds.uT.at4(i, e, c, x) - st.mean[static_cast<size_t>(c)]) /
                                   st.std_dev[static_cast<size_t>(c)];
  out.norm_mean = st.mean;
  out.norm_std = st.std_dev;
  out.normalized = true;
  return out;
}

inline Tensor denormalize_field(const Tensor& field, const NormStats& st) {
  // field is [C,N] in normalized units
  Tensor out = field;
  for (int64_t c = 0; c < field.dim(0); ++c)
    for (int64_t x = 0; x < field.dim(1); ++x)
      out.at2(c, x) = field.at2(c, x) * st.std_dev[static_cast<size_t>(c)] + st.mean[static_cast<size_t>(c)];
  return out;
}

inline Tensor denormalize_variance(const Tensor& var_field, const NormStats& st) {
  Tensor out = var_field;
  for (int64_t c = 0; c < var_field.dim(0); ++c)
    for (int64_t x = 0; x < var_field.dim(1); ++x)
      out.at2(c, x) = var_field.at2(c, x) * st.std_dev[static_cast<size_t>(c)] *
                      st.std_dev[static_cast<size_t>(c)];
  return out;
}

// Unbiased per-point ensemble moments of one initial condition's members.
inline Tensor ensemble_mean(const Tensor& uT, int64_t ic) {
  const int64_t E = uT.dim(1), C = uT.dim(2), N = uT.dim(3);
  Tensor m(Shape{C, N});
  for (int64_t e = 0; e < E; ++e)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t x = 0; x < N; ++x) m.at2(c, x) += uT.at4(ic, e, c, x);
  for (auto& v : m.data) v /= static_cast<double>(E);
  return m;
}

inline Tensor ensemble_variance(const Tensor& uT, int64_t ic) {
  const int64_t E = uT.dim(1), C = uT.dim(2), N = uT.dim(3);
  if (E < 2) throw Error("ensemble_variance: need at least 2 members");
  Tensor m = ensemble_mean(uT, ic);
  Tensor v(Shape{C, N});
  for (int64_t e = 0; e < E; ++e)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t x = 0; x < N; ++x) {
        double d = uT.at4(ic, e, c, x) - m.at2(c, x);
        v.at2(c, x) += d * d;
      }
  for (auto& x : v.data) x /= static_cast<double>(E - 1);
  return v;
}

// ---- MNODS file format ----

inline constexpr char kDatasetMagic[8] = {'M', 'N', 'O', 'D', 'S', 0, 0, 1};

inline void save_dataset(const EnsembleDataset& ds, const std::filesystem::path& path,
                         bool force = false) {
  ds.validate();
  require_path_writable(path, force);
  Json header;
  header["schema_version"] = 1;
  header["meta"] = ds.meta;
  header["horizon"] = ds.horizon;
  header["coord_len"] = ds.coord_len;
  header["normalized"] = ds.normalized;
  header["norm_mean"] = ds.norm_mean;
  header["norm_std"] = ds.norm_std;
  header["u0_shape"] = ds.u0.shape;
  header["uT_shape"] = ds.uT.shape;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write_header(out, kDatasetMagic, header);
  ser_detail::write_f64(out, ds.u0.data);
  ser_detail::write_f64(out, ds.uT.data);
  if (!out) throw IoError("write failed: " + path.string());
}

inline EnsembleDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset: " + path.string());
  Json header = read_header(in, kDatasetMagic, "MNODS dataset");
  if (header.at("schema_version").get<int>() != 1) throw IoError("unsupported dataset schema version");
  EnsembleDataset ds;
  ds.meta = header.at("meta");
  ds.horizon = header.at("horizon").get<double>();
  ds.coord_len = header.at("coord_len").get<double>();
  ds.normalized = header.at("normalized").get<bool>();
  ds.norm_mean = header.at("norm_mean").get<std::vector<double>>();
  ds.norm_std = header.at("norm_std").get<std::vector<double>>();
  Shape s0 = header.at("u0_shape").get<Shape>();
  Shape sT = header.at("uT_shape").get<Shape>();
  ds.u0 = Tensor(s0);
  ds.uT = Tensor(sT);
  ser_detail::read_f64(in, ds.u0.data);
  ser_detail::read_f64(in, ds.uT.data);
  ds.validate();
  return ds;
}

}  // namespace mno::sim
