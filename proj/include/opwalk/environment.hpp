#pragma once

// Finite windows of the i.i.d. Bernoulli space-time field. Per-site bits come
// from a counter-based hash of (seed, absolute coordinates), so windows with
// different geometry but equal (seed, p) agree on their common sites and
// shifted views stay consistent with the full field. Storage is bit-packed
// with word-aligned time slices.

#include <cstring>
#include <istream>
#include <memory>
#include <ostream>
#include <utility>

#include "opwalk/common.hpp"

namespace opwalk {

enum class BoundaryMode { open, periodic };

inline const char* to_string(BoundaryMode b) {
  return b == BoundaryMode::open ? "open" : "periodic";
}

// Integer threshold for "hash < p": (h >> 11) < ceil(p * 2^53) is exact.
inline std::uint64_t open_threshold(double p) {
  return static_cast<std::uint64_t>(std::ceil(p * 9007199254740992.0));
}

class EnvironmentWindow {
 public:
  EnvironmentWindow() = default;

  static EnvironmentWindow sample(int d, const std::vector<int>& extents,
                                  std::int64_t t_lo, std::int64_t t_hi, double p,
                                  std::uint64_t seed, BoundaryMode boundary) {
    EnvironmentWindow w = prepare(d, extents, t_lo, t_hi, p, seed, boundary);
    auto bits = std::make_shared<std::vector<std::uint64_t>>(w.word_count(), 0);
    const std::int64_t svol = w.canon_.volume();
    const std::uint64_t thr = open_threshold(p);
    const std::uint64_t h0 = mix64(seed ^ 0x8f1bbcdc2f1b3141ULL);
    for (std::int64_t t = t_lo; t <= t_hi; ++t) {
      std::uint64_t* words = bits->data() + (t - t_lo) * w.swords_;
      const std::uint64_t ht = static_cast<std::uint64_t>(t) ^ 0xd6e8feb86659fd93ULL;
      Coords x = w.canon_.lo;
      std::uint64_t word = 0;
      for (std::int64_t i = 0; i < svol; ++i) {
        std::uint64_t h = h0;
        for (int a = 0; a < d; ++a)
          h = mix64(h ^ (static_cast<std::uint64_t>(static_cast<std::int64_t>(
                             x[static_cast<std::size_t>(a)])) +
                         0x165667b19e3779f9ULL * static_cast<std::uint64_t>(a + 1)));
        h = mix64(h ^ ht);
        if ((h >> 11) < thr) word |= 1ULL << (i & 63);
        if ((i & 63) == 63) {
          words[i >> 6] = word;
          word = 0;
        }
        for (int axis = d - 1; axis >= 0; --axis) {
          auto ai = static_cast<std::size_t>(axis);
          if (x[ai] < w.canon_.hi[ai]) {
            ++x[ai];
            break;
          }
          x[ai] = w.canon_.lo[ai];
        }
      }
      if (svol & 63) words[svol >> 6] = word;
    }
    w.bits_ = std::move(bits);
    return w;
  }

  // Explicit occupancy (site order: time slices ascending, row-major space).
  static EnvironmentWindow from_occupancy(int d, const std::vector<int>& extents,
                                          std::int64_t t_lo, std::int64_t t_hi,
                                          double p, BoundaryMode boundary,
                                          const std::vector<std::uint8_t>& occ) {
    EnvironmentWindow w = prepare(d, extents, t_lo, t_hi, p, 0, boundary);
    const std::int64_t svol = w.canon_.volume();
    const std::int64_t total = svol * (t_hi - t_lo + 1);
    if (static_cast<std::int64_t>(occ.size()) != total)
      throw ConfigError("occupancy size does not match geometry");
    auto bits = std::make_shared<std::vector<std::uint64_t>>(w.word_count(), 0);
    for (std::int64_t i = 0; i < total; ++i)
      if (occ[static_cast<std::size_t>(i)]) {
        const std::int64_t t = i / svol, s = i % svol;
        (*bits)[static_cast<std::size_t>(t * w.swords_ + (s >> 6))] |=
            1ULL << (s & 63);
      }
    w.bits_ = std::move(bits);
    return w;
  }

  int dim() const { return d_; }
  double p() const { return p_; }
  std::uint64_t seed() const { return seed_; }
  BoundaryMode boundary() const { return boundary_; }

  // Logical bounds of this (possibly shifted) view.
  const SpatialBox& bounds() const { return bounds_; }
  std::int64_t time_lo() const { return vt_lo_; }
  std::int64_t time_hi() const { return vt_hi_; }
  std::int64_t slice_volume() const { return canon_.volume(); }

  bool is_open(const Coords& x, std::int64_t n) const {
    const std::int64_t idx = resolve(x, n);
    return ((*bits_)[static_cast<std::size_t>(idx >> 6)] >> (idx & 63)) & 1ULL;
  }

  // view(x, n) = env(x + y, n + m); composing shifts adds offsets.
  EnvironmentWindow shifted(const Coords& y, std::int64_t m) const {
    EnvironmentWindow v = *this;
    for (int i = 0; i < d_; ++i) {
      auto ii = static_cast<std::size_t>(i);
      v.off_[ii] += y[ii];
      if (boundary_ == BoundaryMode::open) {
        v.bounds_.lo[ii] -= y[ii];
        v.bounds_.hi[ii] -= y[ii];
      }
    }
    v.toff_ += m;
    v.vt_lo_ -= m;
    v.vt_hi_ -= m;
    return v;
  }

  Coords view_offset() const { return off_; }
  std::int64_t view_time_offset() const { return toff_; }
  bool is_view() const {
    if (toff_ != 0) return true;
    for (int i = 0; i < d_; ++i)
      if (off_[static_cast<std::size_t>(i)] != 0) return true;
    return false;
  }

  // Empirical fraction of open sites on one time slice.
  double slice_open_fraction(std::int64_t n) const {
    std::int64_t open = 0;
    for_each_site(bounds_, [&](const Coords& x) { open += is_open(x, n); });
    return static_cast<double>(open) / static_cast<double>(bounds_.volume());
  }

  // --- binary dump ("OPW1"), canonical storage only -----------------------
  void write_binary(std::ostream& os) const {
    require_unshifted("write_binary");
    os.write("OPW1", 4);
    write_header_tail(os);
    write_packed_bits(os);
  }

  static EnvironmentWindow read_binary(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "OPW1", 4) != 0)
      throw ConfigError("bad magic in field dump");
    return read_after_magic(is);
  }

  // Plain-text sparse format: one line "x1 ... xd n" per open site.
  void write_sparse_text(std::ostream& os) const {
    require_unshifted("write_sparse_text");
    for (std::int64_t t = vt_lo_; t <= vt_hi_; ++t)
      for_each_site(bounds_, [&](const Coords& x) {
        if (!is_open(x, t)) return;
        for (int i = 0; i < d_; ++i)
          os << x[static_cast<std::size_t>(i)] << ' ';
        os << t << '\n';
      });
  }

  bool same_occupancy(const EnvironmentWindow& o) const {
    return d_ == o.d_ && canon_ == o.canon_ && vt_lo_ == o.vt_lo_ &&
           vt_hi_ == o.vt_hi_ && *bits_ == *o.bits_;
  }

 protected:
  friend class BackboneField;

  static EnvironmentWindow prepare(int d, const std::vector<int>& extents,
                                   std::int64_t t_lo, std::int64_t t_hi, double p,
                                   std::uint64_t seed, BoundaryMode boundary) {
    if (p < 0.0 || p > 1.0) throw ConfigError("p must lie in [0,1]");
    if (t_hi < t_lo) throw ConfigError("time range is empty");
    for (int e : extents)
      if (e < 0) throw ConfigError("spatial extent must be positive");
    EnvironmentWindow w;
    w.d_ = d;
    w.canon_ = SpatialBox::centered(d, extents);
    w.bounds_ = w.canon_;
    w.t_lo_ = t_lo;
    w.t_hi_ = t_hi;
    w.vt_lo_ = t_lo;
    w.vt_hi_ = t_hi;
    w.p_ = p;
    w.seed_ = seed;
    w.boundary_ = boundary;
    w.swords_ = (w.canon_.volume() + 63) / 64;
    return w;
  }

  std::size_t word_count() const {
    return static_cast<std::size_t>(swords_ * (t_hi_ - t_lo_ + 1));
  }

  std::int64_t resolve(Coords x, std::int64_t n) const {
    const std::int64_t nt = n + toff_;
    if (nt < t_lo_ || nt > t_hi_)
      throw GeometryError("time index outside window; enlarge the time range");
    for (int i = 0; i < d_; ++i) {
      auto ii = static_cast<std::size_t>(i);
      x[ii] += off_[ii];
    }
    if (boundary_ == BoundaryMode::periodic) {
      x = canon_.wrap(x);
    } else if (!canon_.contains(x)) {
      throw GeometryError("site outside open-boundary window; enlarge the window");
    }
    return (nt - t_lo_) * swords_ * 64 + canon_.index(x);
  }

  // Raw word pointer for one storage slice (canonical space, no view offset).
  const std::uint64_t* slice_words(std::int64_t storage_t) const {
    return bits_->data() + (storage_t - t_lo_) * swords_;
  }
  std::int64_t storage_time(std::int64_t n) const { return n + toff_; }

  void require_unshifted(const char* what) const {
    if (is_view())
      throw ConfigError(std::string(what) + " is only supported on unshifted windows");
  }

  void write_header_tail(std::ostream& os) const {
    auto put_u32 = [&](std::uint32_t v) {
      unsigned char b[4];
      for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
      os.write(reinterpret_cast<const char*>(b), 4);
    };
    auto put_u64 = [&](std::uint64_t v) {
      unsigned char b[8];
      for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
      os.write(reinterpret_cast<const char*>(b), 8);
    };
    put_u32(static_cast<std::uint32_t>(d_));
    for (int i = 0; i < d_; ++i)
      put_u64(static_cast<std::uint64_t>(canon_.hi[static_cast<std::size_t>(i)]));
    put_u64(static_cast<std::uint64_t>(t_lo_));
    put_u64(static_cast<std::uint64_t>(t_hi_));
    std::uint64_t pbits;
    std::memcpy(&pbits, &p_, 8);
    put_u64(pbits);
    put_u64(seed_);
    os.put(boundary_ == BoundaryMode::periodic ? 1 : 0);
  }

  // Continuous row-major packed bits, little-endian bytes, LSB first.
  void write_packed_bits(std::ostream& os) const {
    const std::int64_t svol = canon_.volume();
    unsigned char byte = 0;
    int fill = 0;
    for (std::int64_t t = t_lo_; t <= t_hi_; ++t) {
      const std::uint64_t* words = slice_words(t);
      for (std::int64_t i = 0; i < svol; ++i) {
        if ((words[i >> 6] >> (i & 63)) & 1ULL) byte |= 1u << fill;
        if (++fill == 8) {
          os.put(static_cast<char>(byte));
          byte = 0;
          fill = 0;
        }
      }
    }
    if (fill) os.put(static_cast<char>(byte));
  }

  static std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }

  static EnvironmentWindow read_after_magic(std::istream& is) {
    unsigned char b4[4];
    is.read(reinterpret_cast<char*>(b4), 4);
    std::uint32_t d = 0;
    for (int i = 0; i < 4; ++i) d |= static_cast<std::uint32_t>(b4[i]) << (8 * i);
    if (d < 1 || d > static_cast<std::uint32_t>(kMaxDim))
      throw ConfigError("bad dimension in field dump");
    std::vector<int> extents;
    for (std::uint32_t i = 0; i < d; ++i)
      extents.push_back(static_cast<int>(static_cast<std::int64_t>(get_u64(is))));
    const auto t_lo = static_cast<std::int64_t>(get_u64(is));
    const auto t_hi = static_cast<std::int64_t>(get_u64(is));
    const std::uint64_t pbits = get_u64(is);
    double p;
    std::memcpy(&p, &pbits, 8);
    const std::uint64_t seed = get_u64(is);
    const int bflag = is.get();
    EnvironmentWindow w =
        prepare(static_cast<int>(d), extents, t_lo, t_hi, p, seed,
                bflag ? BoundaryMode::periodic : BoundaryMode::open);
    const std::int64_t svol = w.canon_.volume();
    const std::int64_t total = svol * (t_hi - t_lo + 1);
    auto bits = std::make_shared<std::vector<std::uint64_t>>(w.word_count(), 0);
    unsigned char byte = 0;
    int fill = 8;
    for (std::int64_t i = 0; i < total; ++i) {
      if (fill == 8) {
        const int c = is.get();
        if (c < 0) throw ConfigError("truncated field dump");
        byte = static_cast<unsigned char>(c);
        fill = 0;
      }
      if ((byte >> fill) & 1u) {
        const std::int64_t t = i / svol, s = i % svol;
        (*bits)[static_cast<std::size_t>(t * w.swords_ + (s >> 6))] |=
            1ULL << (s & 63);
      }
      ++fill;
    }
    w.bits_ = std::move(bits);
    w.seed_ = seed;
    return w;
  }

  int d_ = 1;
  SpatialBox canon_;  // canonical storage box
  SpatialBox bounds_;
  std::int64_t t_lo_ = 0, t_hi_ = 0;    // storage time range
  std::int64_t vt_lo_ = 0, vt_hi_ = 0;  // logical (view) time range
  double p_ = 0.0;
  std::uint64_t seed_ = 0;
  BoundaryMode boundary_ = BoundaryMode::open;
  std::int64_t swords_ = 0;  // words per slice
  std::shared_ptr<const std::vector<std::uint64_t>> bits_;
  Coords off_{};
  std::int64_t toff_ = 0;
};

inline EnvironmentWindow sample_environment(int d, const std::vector<int>& extents,
                                            std::pair<std::int64_t, std::int64_t> time_range,
                                            double p, std::uint64_t seed,
                                            BoundaryMode boundary = BoundaryMode::open) {
  return EnvironmentWindow::sample(d, extents, time_range.first, time_range.second,
                                   p, seed, boundary);
}

inline EnvironmentWindow shift_view(const EnvironmentWindow& env, const Coords& y,
                                    std::int64_t m) {
  return env.shifted(y, m);
}

inline bool is_open(const EnvironmentWindow& env, const Coords& x, std::int64_t n) {
  return env.is_open(x, n);
}

}  // namespace opwalk
