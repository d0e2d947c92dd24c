#include <catch_amalgamated.hpp>

#include <random>

#include "droopstab/droopstab.hpp"
#include "support/oracles.hpp"

using namespace droopstab;
using Catch::Matchers::WithinAbs;

namespace {

Model uniform_model(std::size_t n, std::span<const Coupling> lines, double chi,
                    std::span<const Shunt> shunts = {}) {
  Model m;
  m.net = build_network(n, lines, shunts, true);
  m.params = InverterParams::uniform(n, 0.1, 1.0, chi, 0.0, 0.0, 1.0, 0.0);
  return m;
}

struct Evaluated {
  Model model;
  Equilibrium eq;
  LinearizedSystem lin;
  CriteriaReport rep;
  StabilityReport stab;
};

Evaluated evaluate(Model m, Equilibrium eq, std::uint64_t seed = 0) {
  auto lin = build_linearization(eq, m);
  auto rep = evaluate_all(eq, m, lin, seed);
  auto stab = eigen_stability(lin);
  return {std::move(m), std::move(eq), std::move(lin), std::move(rep), std::move(stab)};
}

// Random instances, a third of them with shunts on some nodes; every other
// draw is stressed and solved from a random start to reach unstable points.
std::vector<Evaluated> random_suite(std::uint64_t seed, int count, int n_max = 5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Evaluated> out;
  while (static_cast<int>(out.size()) < count) {
    auto m = oracle::random_model(rng, 2, n_max);
    if (out.size() % 3 == 2) {
      std::vector<Coupling> lines;
      for (auto [j, l] : m.net.couplings())
        lines.push_back({j, l, m.net.susceptance()(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(l))});
      std::vector<Shunt> shunts;
      for (std::size_t j = 0; j < m.size(); ++j)
        if (u(rng) < 0.5) shunts.push_back({j, 0.6 * u(rng) - 0.3});
      m.net = build_network(m.size(), lines, shunts, true);
    }
    const bool wild = u(rng) < 0.5;
    if (wild) oracle::stress(m, rng);
    std::optional<Equilibrium> eq;
    if (wild) {
      eq = oracle::solve_from_random_start(m, rng);
    } else {
      try {
        eq = solve_newton(m);
      } catch (const SolverError&) {
      }
    }
    if (eq) out.push_back(evaluate(std::move(m), std::move(*eq), seed));
  }
  return out;
}

double projected_top(const LinearizedSystem& lin) {
  const Matrix Xi = reduced_jacobian(lin);
  const Matrix P = project(Xi, joint_subspace(lin));
  return linalg::max_eigenvalue(P);
}

}  // namespace

TEST_CASE("spectral quantities of small Laplacians", "[criteria]") {
  const Coupling pair{0, 1, 1.5};
  auto m = uniform_model(2, {&pair, 1}, 0.1);
  auto lin = build_linearization(solve_newton(m), m);
  auto aux = spectral_aux(lin);
  CHECK_THAT(aux.lambda2, WithinAbs(3.0, 1e-12));
  CHECK_THAT(std::abs(aux.fiedler(0)), WithinAbs(1.0 / std::sqrt(2.0), 1e-12));
  CHECK_THAT(aux.fiedler(0) + aux.fiedler(1), WithinAbs(0.0, 1e-12));

  const std::vector<Coupling> path{{0, 1, 1.0}, {1, 2, 1.0}, {2, 3, 1.0}};
  m = uniform_model(4, path, 0.1);
  lin = build_linearization(solve_newton(m), m);
  aux = spectral_aux(lin);
  const Vector ref = Eigen::SelfAdjointEigenSolver<Matrix>(lin.Lambda).eigenvalues();
  CHECK_THAT(aux.lambda2, WithinAbs(ref(1), 1e-12));
  CHECK_THAT(aux.lambda2, WithinAbs(2.0 - std::sqrt(2.0), 1e-12));
}

TEST_CASE("path of three unit couplings has unit algebraic connectivity", "[criteria]") {
  const std::vector<Coupling> path{{0, 1, 1.0}, {1, 2, 1.0}};
  auto m = uniform_model(3, path, 0.1);
  const auto lin = build_linearization(solve_newton(m), m);
  CHECK_THAT(spectral_aux(lin).lambda2, WithinAbs(1.0, 1e-12));
}

TEST_CASE("spectral aux invariants on random instances", "[criteria][property]") {
  for (const auto& c : random_suite(61, 80)) {
    const auto& aux = c.rep.aux;
    const auto& L = c.lin.Lambda;
    CHECK(linalg::max_abs(L * aux.Lambda_pinv * L - L) < 1e-9 * (1.0 + linalg::max_abs(L)));
    if (!c.lin.anchored) {
      CHECK_THAT(aux.fiedler.norm(), WithinAbs(1.0, 1e-12));
      CHECK(std::abs(aux.fiedler.sum()) < 1e-10);
      CHECK_THAT((L * aux.fiedler - aux.lambda2 * aux.fiedler).norm(), WithinAbs(0.0, 1e-9));
    }
    if (aux.lambda2 > 1e-6)
      CHECK_THAT(linalg::spectral_norm(aux.Lambda_pinv) * aux.lambda2, WithinAbs(1.0, 1e-9));
  }
}

TEST_CASE("angle condition", "[criteria]") {
  const Coupling pair{0, 1, 1.5};
  auto m = uniform_model(2, {&pair, 1}, 0.1);
  Equilibrium eq;
  eq.state = SystemState::flat(2);
  CHECK(angle_condition(eq, m.net).satisfied());
  CHECK_THAT(angle_condition(eq, m.net).margin, WithinAbs(1.0, 1e-15));
  eq.state.delta(0) = std::numbers::pi / 2 + 0.01;
  CHECK(angle_condition(eq, m.net).verdict == CriterionVerdict::violated);
}

TEST_CASE("angle margin closes near the transfer limit", "[criteria]") {
  SingleInverterParams q;
  q.chi = 0.01;
  q.Qd = 0.0;
  double last = 1.0;
  for (double Pd : {0.5, 1.0, 1.4, 1.47}) {
    q.Pd = Pd;
    const auto eqs = single_inverter_equilibria(q);
    REQUIRE_FALSE(eqs.empty());
    const auto m = q.to_model();
    const double margin = angle_condition(eqs.back(), m.net).margin;
    CHECK(margin < last);
    last = margin;
  }
  CHECK(last < 0.2);
}

TEST_CASE("decoupled flat case", "[criteria]") {
  const Coupling pair{0, 1, 1.5};
  for (double chi : {0.01, 0.1, 2.0}) {
    auto m = uniform_model(2, {&pair, 1}, chi);
    const auto c = evaluate(m, solve_newton(m));
    REQUIRE(c.lin.A.isZero(1e-15));
    const auto& aux = c.rep.aux;
    const double htop = linalg::max_eigenvalue(c.lin.H_tilde);
    // lemma2_I reduces to lambda2 > 0 and H~ < 0.
    CHECK(c.rep.find("lemma2_I")->satisfied() == (aux.lambda2 > 0 && htop < 0));
    CHECK_THAT(c.rep.find("lemma2_I")->margin, WithinAbs(std::min(aux.lambda2, -htop), 1e-12));
    CHECK_THAT(c.rep.find("cor3")->margin, WithinAbs(aux.lambda2, 1e-12));
    if (htop < 0) CHECK_THAT(c.rep.find("cor5")->margin, WithinAbs(aux.lambda2, 1e-12));
    // The coupling term of cor4 vanishes, leaving the plain line sum.
    const auto& cor4 = *c.rep.find("cor4");
    CHECK_THAT(cor4.detail(0), WithinAbs(1.0 / chi - 1.5, 1e-12));
  }
}

TEST_CASE("tiny reactive droop satisfies lemma2_II", "[criteria]") {
  const std::vector<Coupling> lines{{0, 1, 1.0}, {1, 2, 2.0}, {0, 2, 0.5}};
  auto m = uniform_model(3, lines, 1e-3);
  const auto c = evaluate(m, solve_newton(m));
  CHECK(c.rep.find("lemma2_II")->satisfied());
}

TEST_CASE("cor1 voltage bound arithmetic", "[criteria]") {
  const Coupling pair{0, 1, 1.5};
  auto m = uniform_model(2, {&pair, 1}, 0.1);
  auto c = evaluate(m, solve_newton(m));
  const auto* r = c.rep.find("cor1");
  CHECK(r->satisfied());
  CHECK_THAT(r->margin, WithinAbs(10.0 - 3.0, 1e-12));

  m = uniform_model(2, {&pair, 1}, 2.0);
  c = evaluate(m, solve_newton(m));
  r = c.rep.find("cor1");
  CHECK(r->verdict == CriterionVerdict::violated);
  CHECK_THAT(r->margin, WithinAbs(0.5 - 3.0, 1e-12));
  CHECK(r->kind == CriterionKind::sufficient_for_stability);
}

TEST_CASE("cor1 is not applicable without the angle condition", "[criteria]") {
  const Coupling pair{0, 1, 1.5};
  auto m = uniform_model(2, {&pair, 1}, 0.1);
  Equilibrium eq;
  eq.state = SystemState::flat(2);
  eq.state.delta(0) = 2.0;
  const auto lin = build_linearization(eq, m);
  const auto r = cor1_voltage(eq, m.net, lin);
  CHECK(r.verdict == CriterionVerdict::not_applicable);
  CHECK(std::isnan(r.margin));
}

TEST_CASE("cor2 subset search", "[criteria]") {
  // Singletons: the margin is at least every diagonal entry of H~.
  std::mt19937_64 rng(67);
  for (int i = 0; i < 60; ++i) {
    auto inst = oracle::random_instance(rng, 2, 6);
    const auto lin = build_linearization(inst.eq, inst.model);
    const auto r = cor2_instability(lin);
    CHECK(r.margin >= lin.H_tilde.diagonal().maxCoeff() - 1e-12);
    // Brute-force maximum over all subsets.
    const auto n = lin.size();
    double best = -std::numeric_limits<double>::infinity();
    for (unsigned mask = 1; mask < (1u << n); ++mask) {
      Vector x(n);
      for (Eigen::Index k = 0; k < n; ++k) x(k) = (mask >> k) & 1u;
      const double lhs = (x.array() / (lin.chi.array() * lin.E.array())).sum();
      const double rhs = x.dot(lin.H * x);
      best = std::max(best, rhs - lhs);
    }
    CHECK_THAT(r.margin, WithinAbs(best, 1e-9 * (1.0 + std::abs(best))));
    const auto sampled = cor2_instability(lin, SubsetPolicy::sampled, 5);
    CHECK(sampled.margin <= r.margin + 1e-9);
  }
}

TEST_CASE("cor2 certifies a low-voltage single-inverter point", "[criteria]") {
  // Large reactive droop with reactive demand: the voltage condition has a
  // root near E = 0.2 where the voltage block turns positive.
  SingleInverterParams q;
  q.chi = 5.0;
  q.Pd = 0.0;
  q.Qd = -0.4;
  const auto eqs = single_inverter_equilibria(q);
  REQUIRE(eqs.size() >= 2);
  const auto m = q.to_model();
  const auto low = evaluate(m, eqs.front());
  CHECK_THAT(low.eq.state.E(0), WithinAbs(0.2, 1e-9));
  const auto* r = low.rep.find("cor2");
  REQUIRE(r->satisfied());
  CHECK(r->kind == CriterionKind::sufficient_for_instability);
  CHECK(low.stab.verdict == Verdict::unstable);
  CHECK(low.stab.dominant.real() > 0.0);
  const auto high = evaluate(m, eqs.back());
  CHECK(high.rep.find("cor2")->verdict == CriterionVerdict::violated);
}

TEST_CASE("cor3 right-hand side two ways", "[criteria]") {
  for (const auto& c : random_suite(71, 40)) {
    const auto& lin = c.lin;
    const auto& aux = c.rep.aux;
    double sum = 0.0;
    for (Eigen::Index j = 0; j < lin.size(); ++j) {
      double row = 0.0;
      for (Eigen::Index k = 0; k < lin.size(); ++k) row += lin.A(j, k) * aux.fiedler(k);
      sum += lin.chi(j) * lin.E(j) * row * row;
    }
    const Vector Av = lin.A * aux.fiedler;
    const double quad = Av.dot(lin.chi.cwiseProduct(lin.E).asDiagonal() * Av);
    CHECK_THAT(sum, WithinAbs(quad, 1e-12 * (1.0 + quad)));
    CHECK_THAT(c.rep.find("cor3")->margin, WithinAbs(aux.lambda2 - quad, 1e-12 * (1.0 + quad)));
    CHECK(c.rep.find("cor3")->kind == CriterionKind::necessary_for_stability);
  }
}

TEST_CASE("cor4 holds deep inside the tree's stable region", "[criteria]") {
  ControllerDefaults c;
  c.chi = 0.05;
  const auto m = tree_model(0.1, 4.0, c);
  const auto e = evaluate(m, solve_newton(m));
  CHECK(e.rep.find("cor4")->satisfied());
  CHECK(e.stab.verdict == Verdict::stable);
}

TEST_CASE("exactness and soundness on random instances", "[criteria][property]") {
  int stable = 0, unstable = 0, cor4_hits = 0;
  for (const auto& c : random_suite(73, 300, 6)) {
    const auto& r = c.rep;
    const bool l1 = r.find("lemma2_I")->satisfied();
    const bool l2 = r.find("lemma2_II")->satisfied();
    const double top = projected_top(c.lin);
    if (std::abs(top) > 1e-8) {
      CHECK(l1 == (top < 0));
      CHECK(l2 == (top < 0));
    }
    if (l1) CHECK(c.stab.verdict == Verdict::stable);
    if (r.find("cor4")->satisfied()) {
      ++cor4_hits;
      CHECK(l1);
      CHECK(c.stab.verdict == Verdict::stable);
    }
    if (r.find("cor5")->satisfied()) {
      CHECK(l2);
      CHECK(c.stab.verdict == Verdict::stable);
    }
    if (r.find("cor1")->satisfied())
      CHECK(definiteness_on_subspace(c.lin.H_tilde, Subspace::full) == Definiteness::negative_definite);
    if (r.find("cor2")->satisfied()) {
      CHECK(c.stab.verdict == Verdict::unstable);
    }
    (c.stab.verdict == Verdict::stable ? stable : unstable)++;

    const auto s = schur_decomposition(c.lin, r.aux);
    const Matrix Xi = reduced_jacobian(c.lin);
    CHECK(linalg::max_abs(s.U.transpose() * s.S * s.U - Xi) < 1e-10 * (1.0 + linalg::max_abs(Xi)));
  }
  CHECK(stable > 30);
  CHECK(unstable > 10);
  CHECK(cor4_hits > 5);
}

TEST_CASE("criterion margins are gauge invariant", "[criteria][property]") {
  std::mt19937_64 rng(79);
  for (int i = 0; i < 50; ++i) {
    auto inst = oracle::random_instance(rng);
    if (inst.model.slack) continue;
    Equilibrium shifted = inst.eq;
    shifted.state.delta.array() += 1.234;
    const auto a = evaluate_all(inst.eq, inst.model);
    const auto b = evaluate_all(shifted, inst.model);
    for (std::size_t k = 0; k < a.results.size(); ++k) {
      CHECK(a.results[k].verdict == b.results[k].verdict);
      if (std::isfinite(a.results[k].margin))
        CHECK_THAT(b.results[k].margin,
                   WithinAbs(a.results[k].margin, 1e-10 * (1.0 + std::abs(a.results[k].margin))));
    }
  }
}

TEST_CASE("evaluate_all order and names", "[criteria]") {
  const Coupling pair{0, 1, 1.5};
  auto m = uniform_model(2, {&pair, 1}, 0.1);
  const auto rep = evaluate_all(solve_newton(m), m);
  const std::vector<std::string> names{"angle", "lemma2_I", "lemma2_II", "cor1",
                                       "cor2",  "cor3",     "cor4",      "cor5"};
  REQUIRE(rep.results.size() == names.size());
  for (std::size_t k = 0; k < names.size(); ++k) CHECK(rep.results[k].name == names[k]);
  CHECK(rep.find("nope") == nullptr);
}
