// noi: trainable optimal interpolation for gappy space-time fields.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "noi/nn.hpp"
#include "noi/obs.hpp"
#include "noi/solver.hpp"
#include "noi/training.hpp"

namespace noi {

// ---------------------------------------------------------------------------
// NOI1 binary field format (explicitly little-endian):
//   bytes 0..3   magic "NOI1"
//   u64          dtype code: 1 = float64 field, 2 = packed bitmask
//   u64          ndims (always 3 here)
//   u64 * ndims  shape, slowest axis first (nt, ny, nx)
//   f64 * 3      dx, dy, dt
//   payload      row-major float64, or bits packed LSB-first per byte
// Round-trips are bit-identical.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  put_u64(out, v);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  explicit Reader(const std::string& b) : buf(b) {}
  void need(std::size_t n, const char* what) {
    NOI_REQUIRE(pos + n <= buf.size(), IoError, std::string("field file truncated reading ") + what);
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + static_cast<std::size_t>(i)])) << (8 * i);
    pos += 8;
    return v;
  }
  double f64(const char* what) {
    const std::uint64_t v = u64(what);
    double d;
    std::memcpy(&d, &v, 8);
    return d;
  }
};

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  NOI_REQUIRE(in.good(), IoError, "cannot open file for reading: " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  NOI_REQUIRE(out.good(), IoError, "cannot open file for writing: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  NOI_REQUIRE(out.good(), IoError, "write failed: " + path);
}

inline std::string header(std::uint64_t dtype, int nt, int ny, int nx, const GridGeom& g) {
  std::string out = "NOI1";
  put_u64(out, dtype);
  put_u64(out, 3);
  put_u64(out, static_cast<std::uint64_t>(nt));
  put_u64(out, static_cast<std::uint64_t>(ny));
  put_u64(out, static_cast<std::uint64_t>(nx));
  put_f64(out, g.dx);
  put_f64(out, g.dy);
  put_f64(out, g.dt);
  return out;
}

struct ParsedHeader {
  std::uint64_t dtype;
  int nt, ny, nx;
  GridGeom geom;
};

inline ParsedHeader parse_header(Reader& r) {
  r.need(4, "magic");
  NOI_REQUIRE(r.buf.compare(r.pos, 4, "NOI1") == 0, IoError, "bad magic: not a NOI1 field file");
  r.pos += 4;
  ParsedHeader h;
  h.dtype = r.u64("dtype");
  const std::uint64_t nd = r.u64("ndims");
  NOI_REQUIRE(nd == 3, IoError, "unsupported ndims " + std::to_string(nd));
  h.nt = static_cast<int>(r.u64("shape[0]"));
  h.ny = static_cast<int>(r.u64("shape[1]"));
  h.nx = static_cast<int>(r.u64("shape[2]"));
  NOI_REQUIRE(h.nt > 0 && h.ny > 0 && h.nx > 0, IoError, "invalid shape in field file");
  h.geom.dx = r.f64("dx");
  h.geom.dy = r.f64("dy");
  h.geom.dt = r.f64("dt");
  return h;
}

}  // namespace detail

inline void write_field(const std::string& path, const Field3D& f) {
  std::string out = detail::header(1, f.nt(), f.ny(), f.nx(), f.geom);
  out.reserve(out.size() + 8 * f.numel());
  for (std::size_t i = 0; i < f.numel(); ++i) detail::put_f64(out, f.data[i]);
  detail::write_file_bytes(path, out);
}

inline Field3D read_field(const std::string& path) {
  const std::string bytes = detail::read_file_bytes(path);
  detail::Reader r(bytes);
  const auto h = detail::parse_header(r);
  NOI_REQUIRE(h.dtype == 1, IoError, "expected a float64 field file: " + path);
  Field3D f = Field3D::zeros(h.nt, h.ny, h.nx, h.geom);
  r.need(8 * f.numel(), "payload");
  for (std::size_t i = 0; i < f.numel(); ++i) f.data[i] = r.f64("payload");
  return f;
}

inline void write_mask(const std::string& path, const Mask3D& m) {
  std::string out = detail::header(2, m.nt, m.ny, m.nx, m.geom);
  const std::size_t nbytes = (m.numel() + 7) / 8;
  std::string bits(nbytes, '\0');
  for (std::size_t i = 0; i < m.numel(); ++i) {
    if (m.on[i]) bits[i / 8] = static_cast<char>(bits[i / 8] | (1 << (i % 8)));
  }
  out += bits;
  detail::write_file_bytes(path, out);
}

inline Mask3D read_mask(const std::string& path) {
  const std::string bytes = detail::read_file_bytes(path);
  detail::Reader r(bytes);
  const auto h = detail::parse_header(r);
  NOI_REQUIRE(h.dtype == 2, IoError, "expected a bitmask field file: " + path);
  Mask3D m;
  m.nt = h.nt;
  m.ny = h.ny;
  m.nx = h.nx;
  m.geom = h.geom;
  m.on.assign(static_cast<std::size_t>(h.nt) * h.ny * h.nx, 0);
  const std::size_t nbytes = (m.numel() + 7) / 8;
  r.need(nbytes, "mask payload");
  for (std::size_t i = 0; i < m.numel(); ++i) {
    m.on[i] = (static_cast<unsigned char>(bytes[r.pos + i / 8]) >> (i % 8)) & 1;
  }
  return m;
}

// ---------------------------------------------------------------------------
// CSV writers. Doubles use %.17g so values round-trip.
// ---------------------------------------------------------------------------

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_trace_csv(const std::string& path, const SolveTrace& tr) {
  std::ofstream out(path, std::ios::trunc);
  NOI_REQUIRE(out.good(), IoError, "cannot write trace: " + path);
  out << "iteration,j_phi,grad_norm,mse_truth,mse_oi\n";
  for (const auto& r : tr.rows) {
    out << r.iter << ',' << fmt_double(r.j) << ',' << fmt_double(r.grad_norm) << ','
        << (tr.has_mse_truth ? fmt_double(r.mse_truth) : "nan") << ','
        << (tr.has_mse_oi ? fmt_double(r.mse_oi) : "nan") << '\n';
  }
}

inline void write_history_csv(const std::string& path, const TrainResult& res) {
  std::ofstream out(path, std::ios::trunc);
  NOI_REQUIRE(out.good(), IoError, "cannot write history: " + path);
  out << "epoch,train_loss,val_loss\n";
  for (const auto& r : res.history) out << r.epoch << ',' << fmt_double(r.train_loss) << ',' << fmt_double(r.val_loss) << '\n';
}

// ---------------------------------------------------------------------------
// Tagged parameter files: kernel shapes + flat weights + metadata, as JSON.
// ---------------------------------------------------------------------------

using json = nlohmann::ordered_json;

inline json params_to_json(const ParamRefs& refs, const std::string& kind) {
  json j;
  j["kind"] = kind;
  json params = json::object();
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const Tensor& t = *refs.tensors[i];
    json entry;
    entry["shape"] = t.shape();
    entry["data"] = std::vector<double>(t.data(), t.data() + t.numel());
    params[refs.names[i]] = std::move(entry);
  }
  j["params"] = std::move(params);
  return j;
}

inline void params_from_json(const json& j, const ParamRefs& refs) {
  NOI_REQUIRE(j.contains("params"), IoError, "parameter file has no 'params' object");
  const json& params = j.at("params");
  for (std::size_t i = 0; i < refs.size(); ++i) {
    NOI_REQUIRE(params.contains(refs.names[i]), IoError, "parameter file missing entry " + refs.names[i]);
    const json& entry = params.at(refs.names[i]);
    const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
    NOI_REQUIRE(shape == refs.tensors[i]->shape(), IoError, "parameter shape mismatch for " + refs.names[i]);
    const std::vector<double> data = entry.at("data").get<std::vector<double>>();
    *refs.tensors[i] = Tensor(shape, data);
  }
}

inline void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  NOI_REQUIRE(out.good(), IoError, "cannot write json: " + path);
  out << j.dump(2) << '\n';
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  NOI_REQUIRE(in.good(), IoError, "cannot open json: " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw IoError("invalid json in " + path + ": " + e.what());
  }
  return j;
}

// ---------------------------------------------------------------------------
// Config parsing with strict schemas: unknown keys are rejected so typos
// fail before any computation starts.
// ---------------------------------------------------------------------------

namespace cfg {

inline void check_keys(const json& j, const std::vector<std::string>& allowed, const std::string& where) {
  NOI_REQUIRE(j.is_object(), ConfigError, where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const auto& k : allowed) ok = ok || (it.key() == k);
    NOI_REQUIRE(ok, ConfigError, "unknown key '" + it.key() + "' in " + where);
  }
}

template <typename T>
T get_or(const json& j, const std::string& key, T def) {
  if (!j.contains(key)) return def;
  try {
    return j.at(key).get<T>();
  } catch (const std::exception&) {
    throw ConfigError("bad value type for '" + key + "'");
  }
}

template <typename T>
T require(const json& j, const std::string& key, const std::string& where) {
  NOI_REQUIRE(j.contains(key), ConfigError, "missing key '" + key + "' in " + where);
  try {
    return j.at(key).get<T>();
  } catch (const std::exception&) {
    throw ConfigError("bad value type for '" + key + "' in " + where);
  }
}

/// Simulation config: grid, SPDE parameters, seed.
inline SpdeParams parse_spde(const json& j, std::uint64_t* seed_out) {
  check_keys(j, {"grid", "spde", "spacing", "seed"}, "simulate config");
  const json& grid = j.contains("grid") ? j.at("grid") : json::object();
  check_keys(grid, {"nx", "ny", "nt"}, "grid");
  SpdeParams p;
  p.nx = get_or(grid, "nx", 32);
  p.ny = get_or(grid, "ny", 32);
  p.nt = get_or(grid, "nt", 64);
  const json& sp = j.contains("spde") ? j.at("spde") : json::object();
  check_keys(sp, {"kappa", "tau", "alpha", "gamma", "beta", "velocity_amplitude", "boundary", "burn_in"}, "spde");
  p.kappa = get_or(sp, "kappa", 0.33);
  p.tau = get_or(sp, "tau", 1.0);
  p.alpha = get_or(sp, "alpha", 4);
  p.gamma = get_or(sp, "gamma", 1.0);
  p.beta = get_or(sp, "beta", 25.0);
  p.burn_in = get_or(sp, "burn_in", 50);
  const std::string boundary = get_or<std::string>(sp, "boundary", "periodic");
  NOI_REQUIRE(boundary == "periodic" || boundary == "neumann", ConfigError, "boundary must be periodic or neumann");
  p.boundary = boundary == "periodic" ? Boundary::periodic : Boundary::neumann;
  if (j.contains("spacing")) {
    check_keys(j.at("spacing"), {"dx", "dy", "dt"}, "spacing");
    p.geom.dx = get_or(j.at("spacing"), "dx", 1.0);
    p.geom.dy = get_or(j.at("spacing"), "dy", 1.0);
    p.geom.dt = get_or(j.at("spacing"), "dt", 1.0);
  }
  if (p.beta > 0.0) p.velocity = default_velocity_field(p.ny, p.nx, get_or(sp, "velocity_amplitude", 0.3));
  if (seed_out) *seed_out = get_or<std::uint64_t>(j, "seed", 0);
  p.validate();
  return p;
}

inline TrackPattern parse_track(const json& j) {
  check_keys(j, {"spacing", "slope", "drift", "phase"}, "track");
  TrackPattern t;
  t.spacing = get_or(j, "spacing", 8);
  t.slope = get_or(j, "slope", 1);
  t.drift = get_or(j, "drift", 1);
  t.phase = get_or(j, "phase", 0);
  NOI_REQUIRE(t.spacing >= 1, ConfigError, "track spacing must be >= 1");
  return t;
}

inline IndexRange parse_range(const json& j, const std::string& name) {
  NOI_REQUIRE(j.is_array() && j.size() == 2, ConfigError, "range " + name + " must be [lo, hi)");
  return IndexRange{j.at(0).get<int>(), j.at(1).get<int>()};
}

inline Schedule parse_schedule(const json& j) {
  check_keys(j, {"nu", "k0", "alpha", "k1"}, "schedule");
  Schedule s;
  s.nu = get_or(j, "nu", 0.05);
  s.k0 = get_or(j, "k0", 50);
  s.alpha = get_or(j, "alpha", 0.1);
  s.k1 = get_or(j, "k1", 10);
  s.validate();
  return s;
}

inline LossKind parse_loss(const std::string& s) {
  if (s == "L1" || s == "l1") return LossKind::l1_mse_truth;
  if (s == "L2" || s == "l2") return LossKind::l2_mse_oi;
  if (s == "L3" || s == "l3") return LossKind::l3_oi_cost;
  throw ConfigError("unknown loss '" + s + "' (expected L1, L2 or L3)");
}

inline TrainConfig parse_train(const json& j) {
  check_keys(j, {"loss", "epochs", "lr", "unroll", "batch", "seed"}, "train");
  TrainConfig c;
  c.loss = parse_loss(get_or<std::string>(j, "loss", "L1"));
  c.epochs = get_or(j, "epochs", 20);
  c.lr = get_or(j, "lr", 2e-3);
  c.unroll = get_or(j, "unroll", 8);
  c.batch = get_or(j, "batch", 4);
  c.seed = get_or<std::uint64_t>(j, "seed", 0);
  c.validate();
  return c;
}

}  // namespace cfg

}  // namespace noi
