#pragma once

// Flat key = value experiment configuration with one section per experiment.
// Serialization is canonical so that configs round-trip unchanged and hash
// to a stable run id.

#include <fstream>
#include <sstream>

#include "opwalk/common.hpp"

namespace opwalk {

struct ExperimentConfig {
  std::string experiment = "propagate";
  int d = 1;
  double p = 0.8;
  std::vector<std::int64_t> n_list = {64};
  int seeds = 1;
  std::uint64_t seed_base = 1;
  std::string out_dir = "runs/out";
  int threads = 1;
  std::int64_t horizon_margin = -1;  // -1: auto
  std::map<std::string, std::string> extra;  // section keys

  // --- typed access to section keys -------------------------------------
  bool has(const std::string& key) const { return extra.count(key) > 0; }
  double get_num(const std::string& key, double dflt) const {
    auto it = extra.find(key);
    return it == extra.end() ? dflt : std::stod(it->second);
  }
  std::int64_t get_int(const std::string& key, std::int64_t dflt) const {
    auto it = extra.find(key);
    return it == extra.end() ? dflt : std::stoll(it->second);
  }
  std::string get_str(const std::string& key, const std::string& dflt) const {
    auto it = extra.find(key);
    return it == extra.end() ? dflt : it->second;
  }
  std::vector<std::int64_t> get_int_list(const std::string& key,
                                         std::vector<std::int64_t> dflt) const {
    auto it = extra.find(key);
    if (it == extra.end()) return dflt;
    return parse_int_list(it->second);
  }
  void set(const std::string& key, const std::string& value) {
    extra[key] = value;
  }

  static std::vector<std::int64_t> parse_int_list(const std::string& s) {
    std::vector<std::int64_t> out;
    std::string cur;
    for (char c : s + ",") {
      if (c == ',') {
        if (!cur.empty()) out.push_back(std::stoll(cur));
        cur.clear();
      } else if (!std::isspace(static_cast<unsigned char>(c))) {
        cur += c;
      }
    }
    if (out.empty()) throw ConfigError("empty integer list");
    return out;
  }

  static std::string join_int_list(const std::vector<std::int64_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) s += ',';
      s += std::to_string(v[i]);
    }
    return s;
  }

  // --- parse / serialize -------------------------------------------------
  static ExperimentConfig parse(std::istream& is) {
    ExperimentConfig c;
    c.n_list.clear();
    std::string line, section;
    while (std::getline(is, line)) {
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      auto trim = [](std::string s) {
        const char* ws = " \t\r\n";
        const auto b = s.find_first_not_of(ws);
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(ws);
        return s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[' && line.back() == ']') {
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config line is not key = value: " + line);
      const std::string key = trim(line.substr(0, eq));
      const std::string val = trim(line.substr(eq + 1));
      if (!section.empty()) {
        c.extra[key] = val;
        continue;
      }
      if (key == "experiment")
        c.experiment = val;
      else if (key == "d")
        c.d = static_cast<int>(std::stoll(val));
      else if (key == "p")
        c.p = std::stod(val);
      else if (key == "n")
        c.n_list = parse_int_list(val);
      else if (key == "seeds")
        c.seeds = static_cast<int>(std::stoll(val));
      else if (key == "seed_base")
        c.seed_base = std::stoull(val);
      else if (key == "out")
        c.out_dir = val;
      else if (key == "threads")
        c.threads = static_cast<int>(std::stoll(val));
      else if (key == "horizon_margin")
        c.horizon_margin = std::stoll(val);
      else
        c.extra[key] = val;  // tolerated: unsectioned extras
    }
    if (c.n_list.empty()) c.n_list = {64};
    c.validate();
    return c;
  }

  static ExperimentConfig parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config " + path);
    return parse(is);
  }

  void serialize(std::ostream& os) const {
    os << "experiment = " << experiment << '\n';
    os << "d = " << d << '\n';
    os << "p = " << format_g(p, 17) << '\n';
    os << "n = " << join_int_list(n_list) << '\n';
    os << "seeds = " << seeds << '\n';
    os << "seed_base = " << seed_base << '\n';
    os << "out = " << out_dir << '\n';
    os << "threads = " << threads << '\n';
    os << "horizon_margin = " << horizon_margin << '\n';
    if (!extra.empty()) {
      os << '[' << experiment << "]\n";
      for (const auto& [k, v] : extra) os << k << " = " << v << '\n';
    }
  }

  std::string serialized() const {
    std::ostringstream ss;
    serialize(ss);
    return ss.str();
  }

  std::string run_id() const {
    const std::string s = serialized();
    std::uint64_t h = 0x9ae16a3b2f90404fULL;
    for (char ch : s) h = mix64(h ^ static_cast<unsigned char>(ch));
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(h));
    return buf;
  }

  void validate() const {
    if (d < 1 || d > kMaxDim) throw ConfigError("d must lie in [1,4]");
    if (p < 0.0 || p > 1.0) throw ConfigError("p must lie in [0,1]");
    if (seeds < 1) throw ConfigError("seeds must be >= 1");
    if (threads < 1) throw ConfigError("threads must be >= 1");
    for (auto n : n_list)
      if (n < 0) throw ConfigError("n must be >= 0");
  }

  bool operator==(const ExperimentConfig& o) const {
    return serialized() == o.serialized();
  }
};

}  // namespace opwalk
