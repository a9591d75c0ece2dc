#pragma once

// Disk cache for Monte Carlo annealed laws, keyed by everything that can
// change the values: dimension, p, start, checkpoint set, reps, base seed,
// horizon-margin policy and boundary mode. Values are stored with 17
// significant digits so a cache hit reproduces a cold run bit for bit.

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "opwalk/walk.hpp"

namespace opwalk {

class AnnealedCache {
 public:
  explicit AnnealedCache(std::string dir = "") : dir_(std::move(dir)) {
    if (dir_.empty()) {
      if (const char* env = std::getenv("OPWALK_CACHE"))
        dir_ = env;
      else
        dir_ = ".opwalk-cache";
    }
  }

  const std::string& dir() const { return dir_; }

  // Annealed slices at the given checkpoints, from disk when available.
  std::vector<DistributionSlice> ensemble(int d, double p, const Coords& start,
                                          std::int64_t m,
                                          const std::vector<std::int64_t>& checkpoints,
                                          int reps, std::uint64_t base_seed,
                                          const AnnealedOptions& opt = {}) {
    const std::string key = param_string(d, p, start, m, checkpoints, reps,
                                         base_seed, opt);
    std::vector<DistributionSlice> out;
    bool all_hit = true;
    for (std::size_t i = 0; i < checkpoints.size(); ++i) {
      auto sl = load(key, checkpoints[i], d);
      if (!sl) {
        all_hit = false;
        break;
      }
      sl->time = m + checkpoints[i];
      sl->prov.exact = false;
      sl->prov.base_seed = base_seed;
      sl->prov.reps = reps;
      sl->label = SliceLabel::annealed;
      out.push_back(std::move(*sl));
    }
    if (all_hit) return out;
    out = annealed_ensemble(d, p, start, m, checkpoints, reps, base_seed, opt);
    std::filesystem::create_directories(dir_);
    for (std::size_t i = 0; i < checkpoints.size(); ++i)
      store(key, checkpoints[i], out[i]);
    return out;
  }

  std::string file_for(const std::string& key, std::int64_t checkpoint) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    const std::string full = key + "@" + std::to_string(checkpoint);
    for (char c : full) h = mix64(h ^ static_cast<unsigned char>(c));
    char buf[40];
    std::snprintf(buf, sizeof(buf), "ann_%016llx.txt",
                  static_cast<unsigned long long>(h));
    return dir_ + "/" + buf;
  }

  static std::string param_string(int d, double p, const Coords& start,
                                  std::int64_t m,
                                  const std::vector<std::int64_t>& checkpoints,
                                  int reps, std::uint64_t base_seed,
                                  const AnnealedOptions& opt) {
    std::ostringstream ss;
    char pbuf[40];
    std::snprintf(pbuf, sizeof(pbuf), "%a", p);
    ss << "d=" << d << ";p=" << pbuf << ";start=";
    for (int i = 0; i < d; ++i)
      ss << start[static_cast<std::size_t>(i)] << (i + 1 < d ? "_" : "");
    ss << ";m=" << m << ";times=";
    for (std::size_t i = 0; i < checkpoints.size(); ++i)
      ss << checkpoints[i] << (i + 1 < checkpoints.size() ? "_" : "");
    ss << ";reps=" << reps << ";seed=" << base_seed
       << ";margin=" << opt.field.horizon_margin
       << ";extra=" << opt.field.extra_extent << ";boundary="
       << to_string(opt.field.boundary);
    return ss.str();
  }

 private:
  std::optional<DistributionSlice> load(const std::string& key,
                                        std::int64_t checkpoint, int d) const {
    std::ifstream is(file_for(key, checkpoint));
    if (!is) return std::nullopt;
    std::string header, stored_key;
    if (!std::getline(is, header) || header != "# opwalk annealed cache v1")
      return std::nullopt;
    if (!std::getline(is, stored_key) || stored_key != "key " + key)
      return std::nullopt;  // hash collision or stale file: recompute
    std::size_t sites = 0;
    is >> sites;
    DistributionSlice sl;
    sl.d = d;
    for (std::size_t i = 0; i < sites; ++i) {
      std::uint64_t k;
      double mass, var;
      if (!(is >> k >> mass >> var)) return std::nullopt;
      sl.mass.emplace(k, mass);
      if (var > 0.0) sl.var.emplace(k, var);
    }
    return sl;
  }

  void store(const std::string& key, std::int64_t checkpoint,
             const DistributionSlice& sl) const {
    std::ofstream os(file_for(key, checkpoint), std::ios::binary);
    if (!os) throw ConfigError("cannot write cache file in " + dir_);
    os << "# opwalk annealed cache v1\n";
    os << "key " << key << '\n';
    os << sl.mass.size() << '\n';
    for (const auto& [k, v] : sl.mass)
      os << k << ' ' << format_exact(v) << ' ' << format_exact(sl.var_at(k))
         << '\n';
  }

  std::string dir_;
};

}  // namespace opwalk
