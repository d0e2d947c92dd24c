#include <catch_amalgamated.hpp>

#include <random>

#include "droopstab/droopstab.hpp"
#include "support/oracles.hpp"

using namespace droopstab;
using Catch::Matchers::WithinAbs;

namespace {

Model flat_pair(double chi = 0.1) {
  Model m;
  const Coupling c{0, 1, 1.5};
  m.net = build_network(2, {&c, 1}, {}, true);
  m.params = InverterParams::uniform(2, 0.1, 1.0, chi, 0.0, 0.0, 1.0, 0.0);
  return m;
}

SingleInverterParams demo(double chi) {
  SingleInverterParams q;
  q.Pd = 1.25;
  q.Qd = 0.05;
  q.chi = chi;
  return q;
}

double rel_error(const Matrix& a, const Matrix& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff());
}

}  // namespace

TEST_CASE("flat two-node linearization", "[linearization]") {
  const auto m = flat_pair();
  const auto eq = solve_newton(m);
  const auto lin = build_linearization(eq, m);
  Matrix L(2, 2), H(2, 2);
  L << 1.5, -1.5, -1.5, 1.5;
  // The diagonal sum includes the self term: 2 (-1.5) + 1.5.
  H << -1.5, 1.5, 1.5, -1.5;
  CHECK(rel_error(lin.Lambda, L) < 1e-15);
  CHECK(lin.A.isZero(1e-15));
  CHECK(rel_error(lin.H, H) < 1e-15);
  CHECK_THAT(lin.H_tilde(0, 0), WithinAbs(-11.5, 1e-12));
  CHECK_FALSE(lin.anchored);

  const Matrix Xi = reduced_jacobian(lin);
  CHECK(Xi.topRightCorner(2, 2).isZero(1e-15));
  CHECK(Xi.bottomLeftCorner(2, 2).isZero(1e-15));
  CHECK(rel_error(Xi.topLeftCorner(2, 2), -L) < 1e-15);
}

TEST_CASE("single inverter gives 1x1 blocks", "[linearization]") {
  const auto q = demo(0.05);
  const auto eqs = single_inverter_equilibria(q);
  REQUIRE_FALSE(eqs.empty());
  const auto m = q.to_model();
  for (const auto& eq : eqs) {
    const auto lin = build_linearization(eq, m);
    REQUIRE(lin.size() == 1);
    REQUIRE(lin.anchored);
    const double E = eq.state.E(0), d = eq.state.delta(0);
    // Angle stiffness, angle-voltage coupling and voltage stiffness
    // against the infinite bus.
    CHECK_THAT(lin.Lambda(0, 0), WithinAbs(E * q.B * std::cos(d), 1e-12));
    CHECK_THAT(lin.A(0, 0), WithinAbs(-q.B * std::sin(d), 1e-12));
    CHECK_THAT(lin.H(0, 0), WithinAbs(-2 * q.B + q.B * std::cos(d) / E, 1e-12));
    const Matrix J = full_jacobian(lin);
    const Matrix ref = oracle::fd_jacobian(m, pack(eq.lab_state()));
    CHECK(rel_error(J, ref) < 1e-6);
  }
}

TEST_CASE("analytic Jacobian matches central differences", "[linearization][property]") {
  std::vector<std::pair<Model, Equilibrium>> cases;
  for (double chi : {0.05, 0.15}) {
    const auto q = demo(chi);
    for (const auto& eq : single_inverter_equilibria(q)) cases.emplace_back(q.to_model(), eq);
  }
  for (double P : {0.2, 0.6}) {
    auto m = two_inverter_model(P, 1.5);
    cases.emplace_back(m, solve_newton(m));
    auto t = tree_model(P / 2, 2.0);
    cases.emplace_back(t, solve_newton(t));
  }
  std::mt19937_64 rng(41);
  for (int i = 0; i < 60; ++i) {
    auto inst = oracle::random_instance(rng);
    cases.emplace_back(inst.model, inst.eq);
  }
  for (const auto& [m, eq] : cases) {
    const auto lin = build_linearization(eq, m);
    const Matrix J = full_jacobian(lin);
    const Matrix ref = oracle::fd_jacobian(m, pack(eq.lab_state()));
    CHECK(rel_error(J, ref) < 1e-6);
  }
}

TEST_CASE("free-mode Jacobian annihilates the phase shift", "[linearization][property]") {
  std::mt19937_64 rng(43);
  int n_free = 0;
  for (int i = 0; i < 100; ++i) {
    auto inst = oracle::random_instance(rng);
    const auto lin = build_linearization(inst.eq, inst.model);
    const Matrix Xi = reduced_jacobian(lin);
    CHECK((Xi - Xi.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((lin.Lambda - lin.Lambda.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    if (lin.anchored) continue;
    ++n_free;
    const auto n = lin.size();
    Vector shift = Vector::Zero(3 * n);
    shift.head(n).setOnes();
    CHECK((full_jacobian(lin) * shift).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(lin.Lambda.rowwise().sum().cwiseAbs().maxCoeff() < 1e-12);
    const auto rep = eigen_stability(lin);
    CHECK(rep.zero_mode_excluded);
    CHECK(rep.diagnostic.empty());
  }
  CHECK(n_free > 20);
}

TEST_CASE("eigen_stability on explicit spectra", "[linearization]") {
  Matrix D = Vector(Eigen::Vector3d(-1, -2, -3)).asDiagonal();
  auto rep = eigen_stability(D, StabilityMode::anchored);
  CHECK(rep.verdict == Verdict::stable);
  CHECK_THAT(rep.dominant.real(), WithinAbs(-1.0, 1e-14));
  CHECK_FALSE(rep.zero_mode_excluded);

  D(0, 0) = 0.0;
  rep = eigen_stability(D, StabilityMode::free);
  CHECK(rep.verdict == Verdict::stable);
  CHECK_THAT(rep.dominant.real(), WithinAbs(-2.0, 1e-14));
  CHECK(rep.zero_mode_excluded);

  rep = eigen_stability(D, StabilityMode::anchored);
  CHECK(rep.verdict == Verdict::marginal);

  D(1, 1) = 0.0;
  rep = eigen_stability(D, StabilityMode::free);
  CHECK(rep.verdict == Verdict::marginal);
  CHECK_FALSE(rep.diagnostic.empty());

  D(1, 1) = 0.5;
  rep = eigen_stability(D, StabilityMode::free);
  CHECK(rep.verdict == Verdict::unstable);

  // No eigenvalue near zero in free mode.
  D = Vector(Eigen::Vector3d(-1, -2, -3)).asDiagonal();
  rep = eigen_stability(D, StabilityMode::free);
  CHECK(rep.verdict == Verdict::marginal);
  CHECK_FALSE(rep.diagnostic.empty());
}

TEST_CASE("single inverter stability follows the reactive droop gain", "[linearization]") {
  auto stable_points = [](double chi) {
    const auto q = demo(chi);
    int k = 0;
    for (const auto& eq : single_inverter_equilibria(q))
      if (eigen_stability(build_linearization(eq, q.to_model())).verdict == Verdict::stable) ++k;
    return k;
  };
  CHECK(stable_points(0.05) >= 1);
  CHECK(stable_points(0.15) >= 1);
  CHECK(stable_points(0.3) == 0);
}

TEST_CASE("definiteness on subspaces", "[linearization]") {
  const std::vector<Coupling> lines{{0, 1, 1.0}, {1, 2, 1.0}, {2, 3, 2.0}};
  const auto net = build_network(4, lines, {}, true);
  Model m;
  m.net = net;
  m.params = InverterParams::uniform(4, 0.1, 1.0, 0.1, 0.0, 0.0, 1.0, 0.0);
  const auto lin = build_linearization(solve_newton(m), m);
  CHECK(definiteness_on_subspace(-lin.Lambda, Subspace::D1) == Definiteness::negative_definite);
  CHECK(definiteness_on_subspace(-lin.Lambda, Subspace::full) ==
        Definiteness::negative_semidefinite_only);
  CHECK(definiteness_on_subspace(lin.Lambda, Subspace::full) == Definiteness::indefinite_or_positive);

  std::mt19937_64 rng(47);
  std::normal_distribution<double> g;
  for (int i = 0; i < 200; ++i) {
    const Eigen::Index n = 2 + i % 5;
    Matrix R = Matrix::NullaryExpr(n, n, [&] { return g(rng); });
    Matrix M = -(R * R.transpose()) - 0.05 * Matrix::Identity(n, n);
    if (i % 3 == 0) M += 0.8 * Matrix::Identity(n, n);
    for (auto [s, k] : {std::pair{Subspace::D1, n}, std::pair{Subspace::D2, n / 2}}) {
      if (s == Subspace::D2 && n % 2) continue;
      const double top = oracle::projected_spectrum(M, k).maxCoeff();
      const auto expect = top < -kDefinitenessTol ? Definiteness::negative_definite
                          : top <= kDefinitenessTol ? Definiteness::negative_semidefinite_only
                                                    : Definiteness::indefinite_or_positive;
      CHECK(definiteness_on_subspace(M, s) == expect);
    }
  }
}

TEST_CASE("Lyapunov derivative is non-positive along the linear flow", "[linearization][property]") {
  std::mt19937_64 rng(53);
  std::normal_distribution<double> g;
  for (int i = 0; i < 40; ++i) {
    auto inst = oracle::random_instance(rng);
    const auto lin = build_linearization(inst.eq, inst.model);
    const auto n = lin.size();
    const Matrix J = full_jacobian(lin);
    // Quadratic form in (angle, frequency, voltage) order.
    Matrix P = Matrix::Zero(3 * n, 3 * n);
    P.block(0, 0, n, n) = lin.Lambda;
    P.block(0, 2 * n, n, n) = -lin.A.transpose();
    P.block(2 * n, 0, n, n) = -lin.A;
    P.block(2 * n, 2 * n, n, n) = -lin.H_tilde;
    P.block(n, n, n, n) = lin.kappa.cwiseInverse().cwiseProduct(lin.tau).asDiagonal();
    const Vector w = lin.tau.cwiseInverse().cwiseProduct(lin.chi).cwiseProduct(lin.E);
    for (int k = 0; k < 20; ++k) {
      const Vector x = Vector::NullaryExpr(3 * n, [&] { return g(rng); });
      const double vdot = 2.0 * x.dot(P * (J * x));
      const Vector nu = x.segment(n, n);
      const Vector r = lin.A * x.head(n) + lin.H_tilde * x.tail(n);
      const double closed = -2.0 * nu.dot(lin.kappa.cwiseInverse().cwiseProduct(nu)) -
                            2.0 * r.dot(w.cwiseProduct(r));
      CHECK_THAT(vdot, WithinAbs(closed, 1e-9 * (1.0 + std::abs(closed))));
      CHECK(vdot <= 1e-12 * (1.0 + std::abs(closed)));
    }
  }
}

TEST_CASE("linearization rejects lossy networks and slack mismatches", "[linearization]") {
  const std::vector<Coupling> lines{{0, 1, 1.0, 0.1}};
  Model m;
  m.net = build_network(2, lines, {}, false);
  m.params = InverterParams::uniform(2, 0.1, 1.0, 0.1, 0.0, 0.0, 1.0, 0.0);
  Equilibrium eq;
  eq.state = SystemState::flat(2);
  CHECK_THROWS_AS(build_linearization(eq, m), InvalidModel);

  auto ok = flat_pair();
  ok.slack = SlackBus{1, 1.0};
  CHECK_THROWS_AS(build_linearization(eq, ok), InvalidModel);
}
