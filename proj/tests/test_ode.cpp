#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "gfnode/ode.hpp"
#include "test_util.hpp"

using namespace gfnode;

TEST_CASE("integrate basic solutions", "[ode]") {
  SolverConfig cfg;

  SECTION("zero rhs keeps the state constant") {
    Eigen::VectorXd y0(2);
    y0 << 1, 2;
    auto rhs = [](double, const Eigen::VectorXd& y) { return Eigen::VectorXd::Zero(y.size()).eval(); };
    auto sol = integrate(rhs, y0, {0, 1, 5}, cfg);
    for (const auto& y : sol.states) {
      REQUIRE(y[0] == Catch::Approx(1.0).margin(1e-12));
      REQUIRE(y[1] == Catch::Approx(2.0).margin(1e-12));
    }
    REQUIRE(sol.states[0] == y0);  // exact copy
  }

  SECTION("exponential decay") {
    Eigen::VectorXd y0(1);
    y0 << 1;
    auto rhs = [](double, const Eigen::VectorXd& y) { return (-y).eval(); };
    auto sol = integrate(rhs, y0, {0, 1}, cfg);
    REQUIRE(sol.states[1][0] == Catch::Approx(std::exp(-1.0)).margin(1e-4));
  }

  SECTION("cosine integral") {
    Eigen::VectorXd y0 = Eigen::VectorXd::Zero(1);
    auto rhs = [](double t, const Eigen::VectorXd&) {
      Eigen::VectorXd f(1);
      f << std::cos(t);
      return f;
    };
    auto sol = integrate(rhs, y0, {0, M_PI / 2}, cfg);
    REQUIRE(sol.states[1][0] == Catch::Approx(1.0).margin(1e-4));
  }

  SECTION("dense output hits intermediate times accurately") {
    Eigen::VectorXd y0(1);
    y0 << 1;
    auto rhs = [](double, const Eigen::VectorXd& y) { return (-y).eval(); };
    std::vector<double> ts;
    for (int i = 0; i <= 20; ++i) ts.push_back(0.25 * i);
    auto sol = integrate(rhs, y0, ts, cfg);
    for (std::size_t i = 0; i < ts.size(); ++i)
      REQUIRE(sol.states[i][0] == Catch::Approx(std::exp(-ts[i])).margin(1e-4));
  }
}

TEST_CASE("integrate input validation and failures", "[ode]") {
  SolverConfig cfg;
  Eigen::VectorXd y0(1);
  y0 << 1;
  auto rhs = [](double, const Eigen::VectorXd& y) { return (-y).eval(); };

  REQUIRE_THROWS_AS(integrate(rhs, y0, {0, 1, 1}, cfg), InvalidArgumentError);
  REQUIRE_THROWS_AS(integrate(rhs, y0, {}, cfg), InvalidArgumentError);

  SECTION("max_steps exceeded carries the last valid time") {
    SolverConfig tight = cfg;
    tight.max_steps = 3;
    bool caught = false;
    try {
      integrate(rhs, y0, {0, 100}, tight);
    } catch (const IntegrationError& e) {
      caught = true;
      REQUIRE(e.last_valid_time() >= 0.0);
      REQUIRE(e.last_valid_time() < 100.0);
    }
    REQUIRE(caught);
  }

  SECTION("non-finite rhs raises a numerical failure") {
    auto bad = [](double t, const Eigen::VectorXd& y) {
      Eigen::VectorXd f = y;
      if (t > 0.1) f[0] = std::numeric_limits<double>::quiet_NaN();
      return f;
    };
    REQUIRE_THROWS_AS(integrate(bad, y0, {0, 1}, cfg), NumericalError);
  }
}

TEST_CASE("heat_rhs maps f to -Lf", "[ode]") {
  MolecularGraph k2{2, {{0, 1}}, 1.6};
  Eigen::MatrixXd L = laplacian(k2);
  auto rhs = heat_rhs(L);

  Eigen::VectorXd c = Eigen::VectorXd::Constant(2, 3.0);
  REQUIRE(rhs(0, c).cwiseAbs().maxCoeff() < 1e-14);

  Eigen::VectorXd f(2);
  f << 1, 0;
  Eigen::VectorXd d = rhs(0, f);
  REQUIRE(d[0] == Catch::Approx(-1.0));
  REQUIRE(d[1] == Catch::Approx(1.0));

  auto s = eig_decompose(L);
  for (int k = 0; k < 2; ++k) {
    Eigen::VectorXd u = s.eigenvectors.col(k);
    Eigen::VectorXd want = -s.eigenvalues[k] * u;
    REQUIRE((rhs(0, u) - want).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("heat_closed_form", "[ode]") {
  MolecularGraph k2{2, {{0, 1}}, 1.6};
  auto s = eig_decompose(laplacian(k2));
  Eigen::VectorXd f0(2);
  f0 << 1, 0;

  SECTION("identity at t = 0") {
    REQUIRE((heat_closed_form(s, f0, 0.0) - f0).cwiseAbs().maxCoeff() < 1e-12);
  }

  SECTION("two-mode expansion on K2") {
    for (double t : {0.1, 0.5, 1.0, 3.0}) {
      Eigen::VectorXd f = heat_closed_form(s, f0, t);
      REQUIRE(f[0] == Catch::Approx(0.5 * (1 + std::exp(-2 * t))).margin(1e-12));
      REQUIRE(f[1] == Catch::Approx(0.5 * (1 - std::exp(-2 * t))).margin(1e-12));
    }
  }

  SECTION("long-time limit is the mean on a connected graph") {
    Rng rng(5);
    auto g = testutil::random_connected_graph(rng, 6);
    auto sp = eig_decompose(laplacian(g));
    Eigen::VectorXd x = testutil::random_vector(rng, 6);
    Eigen::VectorXd f = heat_closed_form(sp, x, 500.0);
    REQUIRE((f.array() - x.mean()).abs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("dopri5 matches the heat oracle on random graphs", "[ode]") {
  Rng rng(41);
  SolverConfig cfg;  // rtol 1e-3, atol 1e-4
  for (int trial = 0; trial < 8; ++trial) {
    const int n = 3 + static_cast<int>(rng.below(18));
    auto g = testutil::random_connected_graph(rng, n);
    Eigen::MatrixXd L = laplacian(g);
    auto s = eig_decompose(L);
    Eigen::VectorXd f0 = testutil::random_vector(rng, n);

    std::vector<double> ts = {0, 0.5, 1.0, 2.0, 3.5, 5.0};
    auto sol = integrate(heat_rhs(L), f0, ts, cfg);
    for (std::size_t i = 0; i < ts.size(); ++i) {
      Eigen::VectorXd want = heat_closed_form(s, f0, ts[i]);
      REQUIRE((sol.states[i] - want).cwiseAbs().maxCoeff() < 1e-4);
    }

    // mass conservation along the flow
    for (const auto& y : sol.states)
      REQUIRE(y.sum() == Catch::Approx(f0.sum()).margin(1e-8));

    // mode magnitudes never grow: exact on the closed form, within solver
    // error on the integrated states
    for (int k = 0; k < n; ++k) {
      double prev_exact = std::abs(s.eigenvectors.col(k).dot(f0));
      double prev = prev_exact;
      for (std::size_t i = 1; i < ts.size(); ++i) {
        const double exact =
            std::abs(s.eigenvectors.col(k).dot(heat_closed_form(s, f0, ts[i])));
        REQUIRE(exact <= prev_exact * (1 + 1e-12) + 1e-15);
        prev_exact = exact;
        const double cur = std::abs(s.eigenvectors.col(k).dot(sol.states[i]));
        REQUIRE(cur <= prev + 1e-4);
        prev = cur;
      }
    }
  }
}

TEST_CASE("fixed-step RK4 shows fourth-order convergence", "[ode]") {
  auto rhs = [](double, const Eigen::VectorXd& y) { return (-y).eval(); };
  Eigen::VectorXd y0(1);
  y0 << 1;
  auto run = [&](double h) {
    SolverConfig cfg;
    cfg.method = OdeMethod::rk4;
    cfg.initial_step = h;
    auto sol = integrate(rhs, y0, {0, 1}, cfg);
    return std::abs(sol.states[1][0] - std::exp(-1.0));
  };
  const double e1 = run(0.1);
  const double e2 = run(0.05);
  REQUIRE(e1 / e2 >= 12.0);
}

TEST_CASE("grouped error norm keeps dopri5 rotation invariant", "[ode]") {
  // integrate a rigid rotation field; the step sequence must not depend on
  // the orientation of the initial condition when components are grouped
  Eigen::Matrix3d W;
  W << 0, -1, 0, 1, 0, 0, 0, 0, 0;  // angular velocity around z
  auto rhs = [&](double, const Eigen::VectorXd& y) { return (W * y).eval(); };

  SolverConfig cfg;
  cfg.error_groups = {0, 0, 0};

  Eigen::VectorXd y0(3);
  y0 << 1, 0.2, -0.3;
  Rng rng(9);
  Eigen::Matrix3d R = testutil::random_rotation(rng);

  auto rhs_rot = [&](double, const Eigen::VectorXd& y) {
    return ((R * W * R.transpose()) * y).eval();
  };

  auto a = integrate(rhs, y0, {0, 1, 2}, cfg);
  auto b = integrate(rhs_rot, (R * y0).eval(), {0, 1, 2}, cfg);
  REQUIRE(a.num_rhs_evals == b.num_rhs_evals);
  for (std::size_t i = 0; i < a.states.size(); ++i)
    REQUIRE(((R * a.states[i]) - b.states[i]).cwiseAbs().maxCoeff() < 1e-10);
}
