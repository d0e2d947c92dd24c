#pragma once

// Two-parameter stability maps, separatrix extraction and containment
// audits.  Cells are solved independently (no warm starts), so results do
// not depend on evaluation order or thread count.

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "droopstab/analysis.hpp"

namespace droopstab {

struct SweepAxis {
  std::string path;
  double min = 0.0;
  double max = 1.0;
  std::size_t count = 2;

  void validate() const {
    if (count < 2) throw InvalidModel("axis '" + path + "' needs at least 2 points");
    if (!(min < max)) throw InvalidModel("axis '" + path + "' needs min < max");
  }
  double value(std::size_t i) const {
    if (i + 1 == count) return max;
    return min + (max - min) * static_cast<double>(i) / static_cast<double>(count - 1);
  }
};

struct SweepSpec {
  System system = System::single({});
  SweepAxis x;
  SweepAxis y;
  bool criteria = true;  // evaluate cor1..cor5 and lemma2_I/II per cell
  std::uint64_t seed = 0;

  void validate() const {
    x.validate();
    y.validate();
    // Surface bad paths before any work is scheduled.
    System probe = system;
    probe.set(x.path, x.min);
    probe.set(y.path, y.min);
  }
};

/// Criterion columns of a map, in output order.
inline const std::array<const char*, 7> kMapCriteria = {"cor1", "cor2", "cor3", "cor4",
                                                       "cor5", "lemma2_I", "lemma2_II"};

enum class CellStatus { ok, no_fixed_point, failed };

inline const char* to_string(CellStatus s) {
  switch (s) {
    case CellStatus::ok: return "ok";
    case CellStatus::no_fixed_point: return "no-fixed-point";
    default: return "failed";
  }
}

struct MapCell {
  double x = 0.0;
  double y = 0.0;
  CellStatus status = CellStatus::no_fixed_point;
  std::size_t n_equilibria = 0;
  std::size_t n_stable = 0;
  bool stable = false;  // verdict of the reported (most stable) equilibrium
  double dominant_re = std::numeric_limits<double>::quiet_NaN();
  double dominant_im = std::numeric_limits<double>::quiet_NaN();
  double delta_star = std::numeric_limits<double>::quiet_NaN();
  double E_star = std::numeric_limits<double>::quiet_NaN();
  std::array<int, 7> verdicts{-1, -1, -1, -1, -1, -1, -1};
  std::string note;

  int verdict(const std::string& name) const {
    for (std::size_t k = 0; k < kMapCriteria.size(); ++k)
      if (name == kMapCriteria[k]) return verdicts[k];
    throw std::invalid_argument("unknown criterion '" + name + "'");
  }
};

struct StabilityMap {
  SweepAxis x;
  SweepAxis y;
  std::vector<MapCell> cells;  // row-major in y: index = iy * x.count + ix

  const MapCell& at(std::size_t ix, std::size_t iy) const { return cells[iy * x.count + ix]; }
  std::size_t failures() const {
    return static_cast<std::size_t>(std::count_if(
        cells.begin(), cells.end(), [](const MapCell& c) { return c.status == CellStatus::failed; }));
  }
};

/// Angle of largest magnitude among the dynamic nodes (sign kept) and the
/// smallest dynamic voltage.
inline std::pair<double, double> extreme_angle_voltage(const Equilibrium& eq) {
  double d = 0.0, e = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < eq.state.delta.size(); ++j) {
    if (eq.slack && static_cast<std::size_t>(j) == *eq.slack) continue;
    if (std::abs(eq.state.delta(j)) > std::abs(d)) d = eq.state.delta(j);
    e = std::min(e, eq.state.E(j));
  }
  return {d, e};
}

inline MapCell evaluate_cell(const System& base, const SweepAxis& ax, const SweepAxis& ay,
                             double x, double y, bool criteria, std::uint64_t seed) {
  MapCell c;
  c.x = x;
  c.y = y;
  try {
    System sys = base;
    sys.set(ax.path, x);
    sys.set(ay.path, y);
    const SystemAnalysis an = analyze(sys, criteria, seed);
    c.n_equilibria = an.points.size();
    c.n_stable = an.n_stable();
    const PointAnalysis* best = an.most_stable();
    if (!best) {
      c.status = CellStatus::no_fixed_point;
      c.note = an.solver_note;
      return c;
    }
    c.status = CellStatus::ok;
    c.stable = best->stability.verdict == Verdict::stable;
    c.dominant_re = best->stability.dominant.real();
    c.dominant_im = best->stability.dominant.imag();
    std::tie(c.delta_star, c.E_star) = extreme_angle_voltage(best->eq);
    if (criteria)
      for (std::size_t k = 0; k < kMapCriteria.size(); ++k)
        if (const auto* r = best->criteria.find(kMapCriteria[k])) c.verdicts[k] = verdict_code(r->verdict);
  } catch (const std::exception& e) {
    c.status = CellStatus::failed;
    c.note = e.what();
  }
  return c;
}

/// Runs `work(i)` for i in [0, count) on `threads` workers pulling indices
/// from a shared counter.
template <class Work>
void parallel_for(std::size_t count, unsigned threads, Work&& work) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
  std::atomic<std::size_t> next{0};
  auto run = [&] {
    for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) work(i);
  };
  if (threads == 1) return run();
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) pool.emplace_back(run);
  for (auto& t : pool) t.join();
}

inline StabilityMap sweep(const SweepSpec& spec, unsigned threads = 1) {
  spec.validate();
  StabilityMap map{spec.x, spec.y, std::vector<MapCell>(spec.x.count * spec.y.count)};
  parallel_for(map.cells.size(), threads, [&](std::size_t i) {
    const std::size_t ix = i % spec.x.count, iy = i / spec.x.count;
    map.cells[i] = evaluate_cell(spec.system, spec.x, spec.y, spec.x.value(ix), spec.y.value(iy),
                                 spec.criteria, spec.seed + i);
  });
  return map;
}

struct Polyline {
  std::vector<std::array<double, 2>> points;
};

namespace detail {

// Marching-squares corner order: (ix,iy), (ix+1,iy), (ix+1,iy+1), (ix,iy+1).
// Edge e joins corner e and corner (e+1)%4.
inline constexpr std::array<std::array<int, 4>, 16> kSquareSegments = {{
    {-1, -1, -1, -1}, {3, 0, -1, -1}, {0, 1, -1, -1}, {3, 1, -1, -1},
    {1, 2, -1, -1},   {3, 0, 1, 2},   {0, 2, -1, -1}, {3, 2, -1, -1},
    {2, 3, -1, -1},   {0, 2, -1, -1}, {0, 1, 2, 3},   {1, 2, -1, -1},
    {1, 3, -1, -1},   {0, 1, -1, -1}, {3, 0, -1, -1}, {-1, -1, -1, -1},
}};

}  // namespace detail

/// Boundary between cells with and without a stable fixed point.  Each
/// crossing is refined by bisection on the model to `resolution` in axis
/// units; segments are then chained into polylines.
inline std::vector<Polyline> separatrix(const StabilityMap& map, const System& base,
                                        double resolution = 1e-3, unsigned threads = 1) {
  const std::size_t nx = map.x.count, ny = map.y.count;
  auto stable_at = [&](std::size_t ix, std::size_t iy) { return map.at(ix, iy).n_stable > 0; };
  auto probe = [&](double x, double y) {
    System sys = base;
    sys.set(map.x.path, x);
    sys.set(map.y.path, y);
    try {
      return analyze(sys, false).n_stable() > 0;
    } catch (const std::exception&) {
      return false;
    }
  };

  // Grid edges: horizontal ones keyed (ix, iy, 0), vertical ones (ix, iy, 1).
  using Key = std::array<std::size_t, 3>;
  std::vector<Key> edges;
  for (std::size_t iy = 0; iy < ny; ++iy)
    for (std::size_t ix = 0; ix < nx; ++ix) {
      if (ix + 1 < nx && stable_at(ix, iy) != stable_at(ix + 1, iy)) edges.push_back({ix, iy, 0});
      if (iy + 1 < ny && stable_at(ix, iy) != stable_at(ix, iy + 1)) edges.push_back({ix, iy, 1});
    }
  std::vector<std::array<double, 2>> where(edges.size());
  parallel_for(edges.size(), threads, [&](std::size_t k) {
    const auto [ix, iy, dir] = edges[k];
    double a = dir == 0 ? map.x.value(ix) : map.y.value(iy);
    double b = dir == 0 ? map.x.value(ix + 1) : map.y.value(iy + 1);
    const bool sa = stable_at(ix, iy);
    auto at = [&](double s) {
      return dir == 0 ? probe(s, map.y.value(iy)) : probe(map.x.value(ix), s);
    };
    while (std::abs(b - a) > resolution) {
      const double mid = 0.5 * (a + b);
      (at(mid) == sa ? a : b) = mid;
    }
    const double s = 0.5 * (a + b);
    where[k] = dir == 0 ? std::array<double, 2>{s, map.y.value(iy)}
                        : std::array<double, 2>{map.x.value(ix), s};
  });
  std::map<Key, std::size_t> index;
  for (std::size_t k = 0; k < edges.size(); ++k) index[edges[k]] = k;

  // Segments between edge crossings, as pairs of crossing indices.
  std::vector<std::array<std::size_t, 2>> segs;
  for (std::size_t iy = 0; iy + 1 < ny; ++iy)
    for (std::size_t ix = 0; ix + 1 < nx; ++ix) {
      const int code = (stable_at(ix, iy) ? 1 : 0) | (stable_at(ix + 1, iy) ? 2 : 0) |
                       (stable_at(ix + 1, iy + 1) ? 4 : 0) | (stable_at(ix, iy + 1) ? 8 : 0);
      const std::array<Key, 4> sq = {Key{ix, iy, 0}, Key{ix + 1, iy, 1}, Key{ix, iy + 1, 0},
                                     Key{ix, iy, 1}};
      const auto& s = detail::kSquareSegments[static_cast<std::size_t>(code)];
      for (int p = 0; p < 4 && s[static_cast<std::size_t>(p)] >= 0; p += 2)
        segs.push_back({index.at(sq[static_cast<std::size_t>(s[static_cast<std::size_t>(p)])]),
                        index.at(sq[static_cast<std::size_t>(s[static_cast<std::size_t>(p + 1)])])});
    }

  // Chain segments.  Every crossing has at most two incident segments.
  std::vector<std::vector<std::size_t>> adj(edges.size());
  for (std::size_t k = 0; k < segs.size(); ++k) {
    adj[segs[k][0]].push_back(k);
    adj[segs[k][1]].push_back(k);
  }
  std::vector<bool> used(segs.size(), false);
  auto walk = [&](std::size_t start, std::vector<std::size_t>& chain) {
    std::size_t cur = start;
    for (;;) {
      std::size_t nxt = segs.size();
      for (auto k : adj[cur])
        if (!used[k]) { nxt = k; break; }
      if (nxt == segs.size()) return;
      used[nxt] = true;
      cur = segs[nxt][0] == cur ? segs[nxt][1] : segs[nxt][0];
      chain.push_back(cur);
    }
  };
  std::vector<Polyline> out;
  auto emit = [&](std::size_t start) {
    std::vector<std::size_t> chain{start};
    walk(start, chain);
    if (chain.size() < 2) return;
    Polyline pl;
    for (auto k : chain) pl.points.push_back(where[k]);
    out.push_back(std::move(pl));
  };
  // Open chains start at crossings with one segment; closed loops after.
  for (std::size_t k = 0; k < edges.size(); ++k)
    if (adj[k].size() == 1) emit(k);
  for (std::size_t k = 0; k < edges.size(); ++k)
    if (std::any_of(adj[k].begin(), adj[k].end(), [&](std::size_t s) { return !used[s]; })) emit(k);
  return out;
}

struct AuditReport {
  std::string criterion;
  bool instability_certificate = false;
  std::size_t evaluated = 0;   // cells with an equilibrium
  std::size_t eigen_stable = 0;
  std::size_t criterion_satisfied = 0;
  std::size_t violations = 0;  // criterion contradicts the eigen verdict
  double coverage = 0.0;       // satisfied / (eigen-stable, or eigen-unstable for cor2)
  std::vector<std::array<double, 2>> violating_cells;
};

/// Soundness of a criterion over a map.  For stability criteria a violation
/// is a satisfied cell whose equilibrium is not eigen-stable; for the cor2
/// instability certificate it is a certified cell that is eigen-stable.
inline AuditReport containment_audit(const StabilityMap& map, const std::string& criterion) {
  AuditReport rep;
  rep.criterion = criterion;
  rep.instability_certificate = criterion == "cor2";
  std::size_t reference = 0;
  for (const auto& c : map.cells) {
    if (c.status != CellStatus::ok) continue;
    ++rep.evaluated;
    if (c.stable) ++rep.eigen_stable;
    const bool target = rep.instability_certificate ? !c.stable : c.stable;
    if (target) ++reference;
    if (c.verdict(criterion) != 1) continue;
    ++rep.criterion_satisfied;
    if (!target) {
      ++rep.violations;
      rep.violating_cells.push_back({c.x, c.y});
    }
  }
  rep.coverage = reference ? static_cast<double>(rep.criterion_satisfied - rep.violations) /
                                 static_cast<double>(reference)
                           : 0.0;
  return rep;
}

inline void format_number(std::ostream& os, double v) {
  if (std::isnan(v)) {
    os << "nan";
    return;
  }
  // Shortest text that reads back to the same double.
  char buf[32];
  const auto end = std::to_chars(buf, buf + sizeof buf, v).ptr;
  os.write(buf, end - buf);
}

inline void write_map_csv(std::ostream& os, const StabilityMap& map) {
  os << "x,y,n_stable,dominant_re,dominant_im,delta_star,E_star";
  for (const char* name : kMapCriteria) os << ',' << name;
  os << '\n';
  for (const auto& c : map.cells) {
    format_number(os, c.x);
    os << ',';
    format_number(os, c.y);
    os << ',' << c.n_stable << ',';
    format_number(os, c.dominant_re);
    os << ',';
    format_number(os, c.dominant_im);
    os << ',';
    format_number(os, c.delta_star);
    os << ',';
    format_number(os, c.E_star);
    for (int v : c.verdicts) os << ',' << v;
    os << '\n';
  }
}

}  // namespace droopstab
