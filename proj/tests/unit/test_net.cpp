#include <doctest.h>

#include "oracles.hpp"

#include <sparseflow/error.hpp>
#include <sparseflow/net.hpp>

#include <cmath>

using namespace sparseflow;

namespace {

MlpSpec spec_of(std::vector<std::size_t> sizes, Activation a) {
  MlpSpec s;
  s.layer_sizes = std::move(sizes);
  s.activation = a;
  return s;
}

ParamVector random_params(const MlpSpec& spec, std::uint64_t seed, double scale = 0.7) {
  return oracle::random_matrix(static_cast<Eigen::Index>(ParamLayout(spec).size()), 1, seed, scale);
}

}  // namespace

TEST_CASE("spec validation") {
  CHECK_NOTHROW(spec_of({3, 8, 2}, Activation::tanh).validate());
  CHECK_THROWS_AS(spec_of({3}, Activation::tanh).validate(), ContractError);
  CHECK_THROWS_AS(spec_of({3, 0, 2}, Activation::tanh).validate(), ContractError);
  CHECK_THROWS_AS(spec_of({2, 8, 2}, Activation::tanh).validate(), ContractError);
  CHECK(MlpSpec::for_dimension(2, {64, 64}, Activation::sigmoid).layer_sizes ==
        std::vector<std::size_t>{3, 64, 64, 2});
}

TEST_CASE("layout of [3,128,2]") {
  ParamLayout lay(spec_of({3, 128, 2}, Activation::sigmoid));
  CHECK(lay.size() == 3 * 128 + 128 + 128 * 2 + 2);
  CHECK(lay.weight_count() == 3 * 128 + 128 * 2);
  CHECK(lay.layers()[1].weight_offset == 3 * 128 + 128);
  CHECK(lay.is_weight(0));
  CHECK_FALSE(lay.is_weight(3 * 128));
}

TEST_CASE("init respects fan-in bounds, zero biases, and is seeded") {
  const MlpSpec spec = spec_of({3, 128, 2}, Activation::sigmoid);
  const ParamVector p = mlp_init(spec, 0);
  ParamLayout lay(spec);
  const double b1 = 1.0 / std::sqrt(3.0), b2 = 1.0 / std::sqrt(128.0);
  for (std::size_t i = 0; i < 3 * 128; ++i) CHECK(std::abs(p[static_cast<Eigen::Index>(i)]) <= b1);
  const auto& l2 = lay.layers()[1];
  for (std::size_t i = 0; i < 256; ++i) CHECK(std::abs(p[static_cast<Eigen::Index>(l2.weight_offset + i)]) <= b2);
  for (std::size_t i = 0; i < 128; ++i) CHECK(p[static_cast<Eigen::Index>(3 * 128 + i)] == 0.0);
  CHECK(p == mlp_init(spec, 0));
  CHECK(p != mlp_init(spec, 1));
}

TEST_CASE("one-hidden-unit tanh net by hand") {
  // z = (0.3, -0.2), t = 0.5; hidden a = 0.4*0.3 - 0.6*(-0.2) + 0.2*0.5 + 0.1
  const MlpSpec spec = spec_of({3, 1, 2}, Activation::tanh);
  ParamVector p(3 + 1 + 2 + 2);
  p << 0.4, -0.6, 0.2, 0.1, 1.5, -2.0, 0.05, -0.3;
  Eigen::Vector2d z(0.3, -0.2);
  const double h = std::tanh(0.4 * 0.3 - 0.6 * -0.2 + 0.2 * 0.5 + 0.1);
  const Eigen::VectorXd f = mlp_forward(spec, p, z, 0.5);
  CHECK(f[0] == doctest::Approx(1.5 * h + 0.05).epsilon(1e-14));
  CHECK(f[1] == doctest::Approx(-2.0 * h - 0.3).epsilon(1e-14));
}

TEST_CASE("forward matches the reference for every activation") {
  for (auto act : {Activation::sigmoid, Activation::tanh, Activation::relu, Activation::softplus}) {
    const MlpSpec spec = spec_of({3, 7, 5, 2}, act);
    const ParamVector p = random_params(spec, 9);
    const Eigen::Vector2d z(0.4, -1.1);
    CHECK((mlp_forward(spec, p, z, 0.3) - oracle::reference_forward(spec, p, z, 0.3)).norm() < 1e-13);
  }
}

TEST_CASE("single linear layer vjp closed form") {
  const MlpSpec spec = spec_of({3, 2}, Activation::sigmoid);
  ParamVector p(8);
  p << 1, 2, 3, 4, 5, 6, 0.5, -0.5;
  const Eigen::Vector2d z(0.7, -0.2), cot(0.3, -1.2);
  const double t = 0.25;
  const MlpVjp r = mlp_vjp(spec, p, z, t, cot);
  Eigen::Matrix<double, 2, 3> W;
  W << 1, 2, 3, 4, 5, 6;
  CHECK((r.grad_z - W.leftCols(2).transpose() * cot).norm() < 1e-14);
  const Eigen::Vector3d in(0.7, -0.2, t);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 3; ++j) CHECK(r.grad_params[i * 3 + j] == doctest::Approx(cot[i] * in[j]));
    CHECK(r.grad_params[6 + i] == doctest::Approx(cot[i]));
  }
}

TEST_CASE("vjp and input Jacobian match finite differences") {
  for (auto act : {Activation::sigmoid, Activation::tanh, Activation::softplus}) {
    const MlpSpec spec = spec_of({3, 6, 4, 2}, act);
    const ParamVector p = random_params(spec, 21);
    const Eigen::Vector2d z(0.3, 0.8), cot(0.9, -0.4);
    const double t = 0.6;
    const MlpVjp r = mlp_vjp(spec, p, z, t, cot);
    auto fz = [&](const Eigen::VectorXd& zz) { return cot.dot(mlp_forward(spec, p, zz, t)); };
    auto fp = [&](const Eigen::VectorXd& pp) { return cot.dot(mlp_forward(spec, pp, z, t)); };
    CHECK(oracle::max_rel_error(r.grad_z, oracle::fd_gradient(fz, z, 1e-6), 1e-8) < 1e-6);
    CHECK(oracle::max_rel_error(r.grad_params, oracle::fd_gradient(fp, p, 1e-6), 1e-6) < 1e-6);
    const Eigen::MatrixXd J = jacobian_input(spec, p, z, t);
    const Eigen::MatrixXd Jfd =
        oracle::fd_jacobian([&](const Eigen::VectorXd& zz) { return mlp_forward(spec, p, zz, t); }, z, 1e-6);
    CHECK((J - Jfd).cwiseAbs().maxCoeff() < 1e-6 * std::max(1.0, Jfd.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("mask application and subset relation") {
  Mask m(std::vector<std::uint8_t>{1, 0, 1, 1});
  ParamVector p(4);
  p << 1, 2, 3, 4;
  CHECK(apply_mask(p, m) == (ParamVector(4) << 1, 0, 3, 4).finished());
  CHECK(m.count() == 3);
  CHECK(m.subset_of(Mask::ones(4)));
  CHECK_FALSE(Mask::ones(4).subset_of(m));
  CHECK(Mask::zeros(4).subset_of(m));
}

TEST_CASE("MlpBatch forward, divergence and reverse pass") {
  const MlpSpec spec = spec_of({3, 9, 7, 2}, Activation::tanh);
  const ParamVector p = random_params(spec, 4);
  const Eigen::Index B = 5;
  const Eigen::MatrixXd Z = oracle::random_matrix(2, B, 8);
  const double t = 0.4;
  MlpBatch net(spec);
  Eigen::MatrixXd F;
  Eigen::VectorXd div;
  const ProbeSet exact = ProbeSet::unit_vectors(2, B);
  net.forward_with_divergence(p, Z, t, exact, F, div);
  for (Eigen::Index j = 0; j < B; ++j) {
    const Eigen::VectorXd z = Z.col(j);
    CHECK((F.col(j) - mlp_forward(spec, p, z, t)).norm() < 1e-13);
    CHECK(div[j] == doctest::Approx(jacobian_input(spec, p, z, t).trace()).epsilon(1e-12));
  }

  // Reverse pass of s = sum_j cf_j . f_j + cd_j * div_j against finite differences.
  const Eigen::MatrixXd cf = oracle::random_matrix(2, B, 12);
  const Eigen::VectorXd cd = oracle::random_matrix(B, 1, 13);
  auto scalar = [&](const ParamVector& pp, const Eigen::MatrixXd& zz) {
    MlpBatch n2(spec);
    Eigen::MatrixXd f2;
    Eigen::VectorXd d2;
    n2.forward_with_divergence(pp, zz, t, exact, f2, d2);
    return (cf.array() * f2.array()).sum() + cd.dot(d2);
  };
  Eigen::MatrixXd gz;
  Eigen::VectorXd gp = Eigen::VectorXd::Zero(p.size());
  net.backward(p, cf, &cd, gz, gp);
  const Eigen::VectorXd gp_fd = oracle::fd_gradient([&](const Eigen::VectorXd& pp) { return scalar(pp, Z); }, p, 1e-6);
  CHECK(oracle::max_rel_error(gp, gp_fd, 1e-6) < 1e-6);
  const Eigen::VectorXd zflat = Eigen::Map<const Eigen::VectorXd>(Z.data(), Z.size());
  const Eigen::VectorXd gz_fd = oracle::fd_gradient(
      [&](const Eigen::VectorXd& zz) { return scalar(p, Eigen::Map<const Eigen::MatrixXd>(zz.data(), 2, B)); },
      zflat, 1e-6);
  CHECK(oracle::max_rel_error(Eigen::Map<const Eigen::VectorXd>(gz.data(), gz.size()), gz_fd, 1e-6) < 1e-6);
}

TEST_CASE("single Hutchinson probe is exact for a diagonal Jacobian") {
  // One linear layer with no z mixing: f = diag(a) z + c t.
  const MlpSpec spec = spec_of({3, 2}, Activation::sigmoid);
  ParamVector p(8);
  p << 0.5, 0, 0.1, 0, -1.5, 0.2, 0, 0;
  sparseflow::Rng rng(1);
  const Eigen::MatrixXd Z = oracle::random_matrix(2, 4, 2);
  for (int trial = 0; trial < 10; ++trial) {
    ProbeSet probe;
    Eigen::MatrixXd e(2, 4);
    for (Eigen::Index j = 0; j < e.size(); ++j) e.data()[j] = rng.rademacher();
    probe.directions.push_back(e);
    probe.weights.push_back(1.0);
    MlpBatch net(spec);
    Eigen::MatrixXd F;
    Eigen::VectorXd div;
    net.forward_with_divergence(p, Z, 0.0, probe, F, div);
    for (Eigen::Index j = 0; j < 4; ++j) CHECK(div[j] == doctest::Approx(-1.0).epsilon(1e-15));
  }
}
