#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "covreg/archive.hpp"
#include "covreg/chain.hpp"
#include "covreg/common.hpp"
#include "covreg/diagnostics.hpp"
#include "covreg/model.hpp"

namespace covreg {

inline constexpr const char* kToolVersion = "covreg 0.1.0";

// ---------------------------------------------------------------------------
// Hashing

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string file_sha256(const std::string& path) { return sha256_hex(read_file(path)); }

// ---------------------------------------------------------------------------
// CSV datasets
//
// Header row: x1..xq followed by response names. Fields are comma separated
// with surrounding blanks ignored; an empty field or the token NaN marks an
// unobserved response. No quoting.

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, ',')) out.push_back(trim(cur));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline bool parse_double(const std::string& tok, double& v) {
  const char* b = tok.data();
  const char* e = b + tok.size();
  if (b != e && *b == '+') ++b;
  const auto res = std::from_chars(b, e, v);
  return res.ec == std::errc() && res.ptr == e;
}

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

struct NamedDataset {
  Dataset data;
  std::vector<std::string> response_names;
};

inline NamedDataset parse_dataset_csv(const std::string& text, const std::string& source = "<memory>") {
  std::istringstream in(text);
  std::string line;
  Index lineno = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++lineno;
    if (!detail::trim(line).empty()) {
      header = detail::split_csv(line);
      break;
    }
  }
  if (header.empty()) throw DataError(source + ": empty file");
  Index q = 0;
  while (q < static_cast<Index>(header.size()) && header[q] == "x" + std::to_string(q + 1)) ++q;
  if (q == 0) throw DataError(source + ":" + std::to_string(lineno) + ": header must start with x1");
  const Index width = static_cast<Index>(header.size());
  const Index p = width - q;
  if (p < 1) throw DataError(source + ": no response columns");

  std::vector<std::vector<double>> xs, ys;
  std::vector<std::vector<bool>> obs;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const std::vector<std::string> f = detail::split_csv(line);
    if (static_cast<Index>(f.size()) != width) {
      throw DataError(source + ":" + std::to_string(lineno) + ": expected " + std::to_string(width) +
                      " fields, found " + std::to_string(f.size()));
    }
    std::vector<double> xr(static_cast<std::size_t>(q)), yr(static_cast<std::size_t>(p));
    std::vector<bool> orow(static_cast<std::size_t>(p));
    for (Index c = 0; c < q; ++c) {
      if (!detail::parse_double(f[c], xr[c]) || !std::isfinite(xr[c])) {
        throw DataError(source + ":" + std::to_string(lineno) + ": predictor '" + f[c] + "' is not a number");
      }
    }
    for (Index c = 0; c < p; ++c) {
      const std::string& tok = f[q + c];
      if (tok.empty() || tok == "NaN") {
        yr[c] = std::numeric_limits<double>::quiet_NaN();
        orow[c] = false;
      } else if (detail::parse_double(tok, yr[c]) && std::isfinite(yr[c])) {
        orow[c] = true;
      } else {
        throw DataError(source + ":" + std::to_string(lineno) + ": response '" + tok + "' in column " +
                        header[q + c] + " is not a number");
      }
    }
    xs.push_back(std::move(xr));
    ys.push_back(std::move(yr));
    obs.push_back(std::move(orow));
  }
  const Index n = static_cast<Index>(xs.size());
  if (n == 0) throw DataError(source + ": no data rows");
  NamedDataset out;
  out.data.xs.resize(n, q);
  out.data.y.resize(n, p);
  out.data.observed.resize(n, p);
  std::set<std::vector<double>> seen;
  for (Index i = 0; i < n; ++i) {
    for (Index c = 0; c < q; ++c) out.data.xs(i, c) = xs[i][c];
    for (Index c = 0; c < p; ++c) {
      out.data.y(i, c) = ys[i][c];
      out.data.observed(i, c) = obs[i][c];
    }
    if (!seen.insert(xs[i]).second) log(LogLevel::warn, source + ": duplicate predictor row " + std::to_string(i + 1));
  }
  out.response_names.assign(header.begin() + q, header.end());
  return out;
}

inline NamedDataset load_named_dataset(const std::string& path) { return parse_dataset_csv(read_file(path), path); }

inline Dataset load_dataset(const std::string& path) { return load_named_dataset(path).data; }

inline std::string format_dataset_csv(const Dataset& d, std::vector<std::string> names = {}) {
  if (names.empty()) {
    for (Index j = 0; j < d.p(); ++j) names.push_back("y" + std::to_string(j + 1));
  }
  if (static_cast<Index>(names.size()) != d.p()) throw std::invalid_argument("dataset: name count mismatch");
  std::ostringstream os;
  for (Index c = 0; c < d.q(); ++c) os << (c ? "," : "") << "x" << c + 1;
  for (const auto& nm : names) os << "," << nm;
  os << "\n";
  for (Index i = 0; i < d.n(); ++i) {
    for (Index c = 0; c < d.q(); ++c) os << (c ? "," : "") << detail::format_double(d.xs(i, c));
    for (Index j = 0; j < d.p(); ++j) {
      os << ",";
      if (d.observed(i, j)) os << detail::format_double(d.y(i, j));
    }
    os << "\n";
  }
  return os.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for '" + path + "'");
}

inline void save_dataset(const Dataset& d, const std::string& path, const std::vector<std::string>& names = {}) {
  write_file(path, format_dataset_csv(d, names));
}

// ---------------------------------------------------------------------------
// Archive container
//
// "CVRGARC" + version byte, then little-endian records: manifest JSON, model
// name, n, p, draw count, mean flag, sweeps, packed Sigma draws, mean draws,
// named traces. A trailing SHA-256 of all preceding bytes guards integrity.

inline constexpr char kArchiveMagic[8] = {'C', 'V', 'R', 'G', 'A', 'R', 'C', '1'};

namespace detail {

static_assert(std::endian::native == std::endian::little, "archive format assumes a little-endian host");

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void doubles(const double* p, std::size_t n) { raw(p, n * sizeof(double)); }
  std::string& bytes() { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(const std::string& b, std::size_t end) : b_(b), end_(end) {}
  void raw(void* p, std::size_t n) {
    if (pos_ + n > end_) throw DataError("archive: truncated");
    std::memcpy(p, b_.data() + pos_, n);
    pos_ += n;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, sizeof v);
    return v;
  }
  std::string str() {
    const std::uint64_t n = u64();
    if (n > end_ - pos_) throw DataError("archive: truncated string");
    std::string s(b_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void doubles(double* p, std::size_t n) { raw(p, n * sizeof(double)); }
  bool done() const { return pos_ == end_; }

 private:
  const std::string& b_;
  std::size_t end_;
  std::size_t pos_ = 8;
};

}  // namespace detail

inline std::string serialize_archive(const PosteriorArchive& a) {
  detail::ByteWriter w;
  w.raw(kArchiveMagic, 8);
  w.str(a.manifest.dump());
  w.str(a.model);
  w.u64(static_cast<std::uint64_t>(a.n));
  w.u64(static_cast<std::uint64_t>(a.p));
  w.u64(static_cast<std::uint64_t>(a.draws()));
  w.u64(a.has_mean() ? 1 : 0);
  for (Index s : a.sweeps) w.u64(static_cast<std::uint64_t>(s));
  for (const Vector& v : a.sigma) w.doubles(v.data(), static_cast<std::size_t>(v.size()));
  for (const Vector& v : a.mu) w.doubles(v.data(), static_cast<std::size_t>(v.size()));
  w.u64(a.traces.size());
  for (const auto& [name, vals] : a.traces) {
    w.str(name);
    w.u64(vals.size());
    w.doubles(vals.data(), vals.size());
  }
  const std::string digest = sha256_hex(w.bytes());
  w.raw(digest.data(), digest.size());
  return std::move(w.bytes());
}

inline PosteriorArchive deserialize_archive(const std::string& bytes, const std::string& source = "<memory>") {
  if (bytes.size() < 8 + 64 || std::memcmp(bytes.data(), kArchiveMagic, 7) != 0) {
    throw DataError(source + ": not a covreg archive");
  }
  if (bytes[7] != kArchiveMagic[7]) {
    throw DataError(source + ": archive version '" + std::string(1, bytes[7]) + "' is not supported (expected '" +
                    std::string(1, kArchiveMagic[7]) + "')");
  }
  const std::size_t body = bytes.size() - 64;
  if (sha256_hex(bytes.substr(0, body)) != bytes.substr(body)) throw DataError(source + ": archive checksum mismatch");
  detail::ByteReader r(bytes, body);
  PosteriorArchive a;
  a.manifest = nlohmann::json::parse(r.str());
  a.model = r.str();
  a.n = static_cast<Index>(r.u64());
  a.p = static_cast<Index>(r.u64());
  const auto draws = static_cast<std::size_t>(r.u64());
  const bool has_mean = r.u64() != 0;
  a.sweeps.resize(draws);
  for (auto& s : a.sweeps) s = static_cast<Index>(r.u64());
  a.sigma.assign(draws, Vector(a.n * a.packed_size()));
  for (Vector& v : a.sigma) r.doubles(v.data(), static_cast<std::size_t>(v.size()));
  if (has_mean) {
    a.mu.assign(draws, Vector(a.n * a.p));
    for (Vector& v : a.mu) r.doubles(v.data(), static_cast<std::size_t>(v.size()));
  }
  const auto nt = r.u64();
  for (std::uint64_t t = 0; t < nt; ++t) {
    std::string name = r.str();
    std::vector<double> vals(static_cast<std::size_t>(r.u64()));
    r.doubles(vals.data(), vals.size());
    a.traces.emplace(std::move(name), std::move(vals));
  }
  if (!r.done()) throw DataError(source + ": trailing bytes in archive");
  return a;
}

inline void save_archive(const PosteriorArchive& a, const std::string& path) { write_file(path, serialize_archive(a)); }

inline PosteriorArchive load_archive(const std::string& path) { return deserialize_archive(read_file(path), path); }

/// Single-draw archive holding a known trajectory (used for simulation truth).
inline PosteriorArchive truth_archive(const CovarianceTrajectory& t) {
  PosteriorArchive a;
  a.model = "truth";
  a.append(t, 0);
  return a;
}

// ---------------------------------------------------------------------------
// Run configuration: flat "key = value" lines, '#' starts a comment.

using ConfigMap = std::map<std::string, std::string>;

inline ConfigMap parse_config(const std::string& text, const std::string& source = "<memory>") {
  ConfigMap out;
  std::istringstream in(text);
  std::string line;
  Index lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": empty key");
    out[key] = detail::trim(line.substr(eq + 1));
  }
  return out;
}

/// Keys understood by apply_config, with their meaning.
inline const std::map<std::string, std::string>& config_schema() {
  static const std::map<std::string, std::string> schema = {
      {"iterations", "Gibbs sweeps (integer)"},
      {"burn_in", "sweeps discarded before retention (integer)"},
      {"thin", "retain every thin-th sweep after burn-in (integer)"},
      {"seed", "64-bit seed"},
      {"init", "prior | data-driven"},
      {"mode", "zero-mean | latent-mean"},
      {"kappa_policy", "fixed | heuristic | grid"},
      {"kappa", "squared-exponential rate for the fixed policy"},
      {"kappa_grid", "comma-separated grid for the grid policy"},
      {"kappa_grid_weights", "comma-separated prior weights (default uniform)"},
      {"kappa_grid_cap", "largest observed-entry count for the grid marginal"},
      {"nugget", "kernel nugget"},
      {"impute", "true | false"},
      {"a1", "shape of delta_1"},
      {"a2", "shape of delta_h, h >= 2"},
      {"a_sigma", "shape of sigma_j^-2"},
      {"b_sigma", "rate of sigma_j^-2"},
      {"L_star", "dictionary truncation"},
      {"k_star", "latent factor truncation"},
      {"init_knots", "knots for the data-driven initialization"},
      {"init_warmup_cycles", "warm-up cycles of the data-driven initialization"},
      {"heuristic_knots", "knots for the kappa heuristic"},
      {"heuristic_bin_halfwidth", "bin half-width for the kappa heuristic (-1: floor(p/2)+1)"},
  };
  return schema;
}

namespace detail {

inline std::vector<double> parse_double_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const std::string& tok : split_csv(v)) {
    double d;
    if (!parse_double(tok, d)) throw std::invalid_argument("config " + key + ": '" + tok + "' is not a number");
    out.push_back(d);
  }
  return out;
}

inline double parse_config_double(const std::string& key, const std::string& v) {
  double d;
  if (!parse_double(v, d)) throw std::invalid_argument("config " + key + ": '" + v + "' is not a number");
  return d;
}

inline long long parse_config_int(const std::string& key, const std::string& v) {
  long long x = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), x);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw std::invalid_argument("config " + key + ": '" + v + "' is not an integer");
  }
  return x;
}

inline bool parse_config_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config " + key + ": '" + v + "' is not a boolean");
}

}  // namespace detail

inline void apply_config(const ConfigMap& cfg, ChainConfig& chain, Hyperparameters& hyper) {
  for (const auto& [key, v] : cfg) {
    if (!config_schema().count(key)) throw std::invalid_argument("config: unknown key '" + key + "'");
    if (key == "iterations") chain.n_iterations = detail::parse_config_int(key, v);
    else if (key == "burn_in") chain.burn_in = detail::parse_config_int(key, v);
    else if (key == "thin") chain.thin = detail::parse_config_int(key, v);
    else if (key == "seed") chain.seed = static_cast<std::uint64_t>(detail::parse_config_int(key, v));
    else if (key == "init") chain.init = parse_init_scheme(v);
    else if (key == "mode") chain.mode = parse_mean_mode(v);
    else if (key == "kappa_policy") chain.kappa_policy = parse_kappa_policy(v);
    else if (key == "kappa") hyper.kernel.kappa = detail::parse_config_double(key, v);
    else if (key == "kappa_grid") chain.kappa_grid = detail::parse_double_list(key, v);
    else if (key == "kappa_grid_weights") chain.kappa_grid_weights = detail::parse_double_list(key, v);
    else if (key == "kappa_grid_cap") chain.kappa_grid_cap = detail::parse_config_int(key, v);
    else if (key == "nugget") hyper.kernel.nugget = detail::parse_config_double(key, v);
    else if (key == "impute") chain.impute = detail::parse_config_bool(key, v);
    else if (key == "a1") hyper.a1 = detail::parse_config_double(key, v);
    else if (key == "a2") hyper.a2 = detail::parse_config_double(key, v);
    else if (key == "a_sigma") hyper.a_sigma = detail::parse_config_double(key, v);
    else if (key == "b_sigma") hyper.b_sigma = detail::parse_config_double(key, v);
    else if (key == "L_star") hyper.L_star = detail::parse_config_int(key, v);
    else if (key == "k_star") hyper.k_star = detail::parse_config_int(key, v);
    else if (key == "init_knots") chain.init_options.n_knots = detail::parse_config_int(key, v);
    else if (key == "init_warmup_cycles") chain.init_options.warmup_cycles = detail::parse_config_int(key, v);
    else if (key == "heuristic_knots") chain.heuristic.n_knots = detail::parse_config_int(key, v);
    else if (key == "heuristic_bin_halfwidth") chain.heuristic.bin_halfwidth = detail::parse_config_int(key, v);
  }
}

/// Every configurable value, as key = value lines (the echo written next to results).
inline std::string format_config(const ChainConfig& c, const Hyperparameters& h) {
  auto list = [](const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + detail::format_double(v[i]);
    return s;
  };
  std::ostringstream os;
  os << "iterations = " << c.n_iterations << "\nburn_in = " << c.burn_in << "\nthin = " << c.thin
     << "\nseed = " << c.seed << "\ninit = " << to_string(c.init) << "\nmode = " << to_string(c.mode)
     << "\nkappa_policy = " << to_string(c.kappa_policy) << "\nkappa = " << detail::format_double(h.kernel.kappa)
     << "\nkappa_grid = " << list(c.kappa_grid) << "\nkappa_grid_weights = " << list(c.kappa_grid_weights)
     << "\nkappa_grid_cap = " << c.kappa_grid_cap << "\nnugget = " << detail::format_double(h.kernel.nugget)
     << "\nimpute = " << (c.impute ? "true" : "false") << "\na1 = " << detail::format_double(h.a1)
     << "\na2 = " << detail::format_double(h.a2) << "\na_sigma = " << detail::format_double(h.a_sigma)
     << "\nb_sigma = " << detail::format_double(h.b_sigma) << "\nL_star = " << h.L_star << "\nk_star = " << h.k_star
     << "\ninit_knots = " << c.init_options.n_knots << "\ninit_warmup_cycles = " << c.init_options.warmup_cycles
     << "\nheuristic_knots = " << c.heuristic.n_knots << "\nheuristic_bin_halfwidth = " << c.heuristic.bin_halfwidth
     << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Plot series

/// CSV x, element_i, element_j, mean, lo, hi for every r >= c, sorted by
/// (element_i, element_j, x), 1-based element indices. The first line names
/// the archive the series came from.
inline std::string format_element_series(const PosteriorArchive& a, const PredictorGrid& xs, double mass,
                                         const std::string& archive_label) {
  if (xs.rows() != a.n) throw std::invalid_argument("emit-series: predictor count differs from archive");
  struct Row {
    Index r, c;
    double x;
    double mean, lo, hi;
  };
  std::vector<Row> rows;
  for (Index c = 0; c < a.p; ++c) {
    for (Index r = c; r < a.p; ++r) {
      const ElementSeries s = element_series(a, r, c, mass);
      for (Index i = 0; i < a.n; ++i) rows.push_back({r, c, xs(i, 0), s.mean[i], s.lower[i], s.upper[i]});
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& u, const Row& v) {
    if (u.r != v.r) return u.r < v.r;
    if (u.c != v.c) return u.c < v.c;
    return u.x < v.x;
  });
  std::ostringstream os;
  os << "# archive: " << archive_label << "\n";
  os << "x,element_i,element_j,mean,lo,hi\n";
  for (const Row& r : rows) {
    os << detail::format_double(r.x) << "," << r.r + 1 << "," << r.c + 1 << "," << detail::format_double(r.mean) << ","
       << detail::format_double(r.lo) << "," << detail::format_double(r.hi) << "\n";
  }
  return os.str();
}

}  // namespace covreg
