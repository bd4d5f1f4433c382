#include <doctest.h>

#include <cmath>

#include <Eigen/Eigenvalues>

#include "smfem/energy.hpp"
#include "smfem/stretch.hpp"
#include "support.hpp"

using namespace smfem;
using namespace smfem::test;

namespace {

Eigen::Matrix3d rot_z(double deg) {
  const double a = deg * M_PI / 180.0;
  Eigen::Matrix3d R;
  R << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  return R;
}

Vec6 diag_stretch(double a, double b, double c) {
  Vec6 s;
  s << a, b, c, 0, 0, 0;
  return s;
}

/// Random F = U diag(s) V^T with singular values in [1e-3, 1] scaled, so the
/// condition number stays below 1e6.
Eigen::Matrix3d random_conditioned(Rng& rng, bool inverted) {
  Eigen::Vector3d s(uniform(rng, 1e-3, 1.0), uniform(rng, 1e-3, 1.0), uniform(rng, 1e-3, 1.0));
  if (inverted) s[0] = -s[0];
  return random_rotation(rng) * s.asDiagonal() * random_rotation(rng).transpose() * uniform(rng, 0.5, 3.0);
}

/// vec6(sym(.)) as a 6 x 9 matrix acting on column-major vec.
Eigen::Matrix<double, 6, 9> sym_pack_matrix() {
  Eigen::Matrix<double, 6, 9> P = Eigen::Matrix<double, 6, 9>::Zero();
  const int rows[6] = {0, 1, 2, 0, 0, 1};
  const int cols[6] = {0, 1, 2, 1, 2, 2};
  for (int p = 0; p < 6; ++p) {
    P(p, rows[p] + 3 * cols[p]) += 0.5;
    P(p, cols[p] + 3 * rows[p]) += 0.5;
  }
  return P;
}

const MaterialModel kModels[] = {MaterialModel::kArap, MaterialModel::kFcr, MaterialModel::kSnh};

}  // namespace

TEST_SUITE("stretch_elasticity") {
  TEST_CASE("packing round trip and weights") {
    Eigen::Matrix3d S;
    S << 1, 4, 5, 4, 2, 6, 5, 6, 3;
    const Vec6 s = pack_symmetric(S);
    CHECK(s == (Vec6() << 1, 2, 3, 4, 5, 6).finished());
    CHECK(unpack_symmetric(s) == S);
    CHECK(stretch_constraint_weights() == (Vec6() << 1, 1, 1, 2, 2, 2).finished());
    CHECK(rest_stretch() == diag_stretch(1, 1, 1));
  }

  TEST_CASE("polar decomposition of simple matrices") {
    const Eigen::Matrix3d I = Eigen::Matrix3d::Identity();
    PolarDecomposition p = polar_decompose(I);
    CHECK((p.R - I).norm() <= 1e-14);
    CHECK((p.S - I).norm() <= 1e-14);

    p = polar_decompose(rot_z(30));
    CHECK((p.R - rot_z(30)).norm() <= 1e-12);
    CHECK((p.S - I).norm() <= 1e-12);

    const Eigen::Matrix3d D = Eigen::Vector3d(2, 1, 1).asDiagonal();
    p = polar_decompose(D);
    CHECK((p.R - I).norm() <= 1e-12);
    CHECK((p.S - D).norm() <= 1e-12);

    Eigen::Matrix3d bad = I;
    bad(1, 2) = std::nan("");
    CHECK_THROWS_AS(polar_decompose(bad), std::domain_error);
  }

  TEST_CASE("polar decomposition of random and inverted matrices") {
    Rng rng(42);
    double orth = 0.0, recon = 0.0, det = 0.0;
    int inverted = 0;
    for (int i = 0; i < 1000; ++i) {
      const Eigen::Matrix3d F = random_conditioned(rng, i < 100);
      inverted += F.determinant() < 0;
      const PolarDecomposition p = polar_decompose(F);
      orth = std::max(orth, (p.R.transpose() * p.R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff());
      recon = std::max(recon, (p.R * p.S - F).cwiseAbs().maxCoeff() / F.cwiseAbs().maxCoeff());
      det = std::max(det, std::abs(p.R.determinant() - 1.0));
      CHECK((p.S - p.S.transpose()).norm() <= 1e-12);
    }
    CHECK(inverted == 100);
    CHECK(orth <= 1e-10);
    CHECK(recon <= 1e-9);
    CHECK(det <= 1e-10);
  }

  TEST_CASE("sbar with the polar rotation is the polar stretch") {
    Rng rng(5);
    for (int i = 0; i < 50; ++i) {
      const Eigen::Matrix3d F = random_conditioned(rng, i % 5 == 0);
      const PolarDecomposition p = polar_decompose(F);
      CHECK((sbar(F, p.R) - pack_symmetric(reference_stretch(F))).norm() <= 1e-10 * F.norm());
    }
    // F = R diag(2,1,1) recovers (2,1,1,0,0,0).
    const Eigen::Matrix3d F = rot_z(30) * Eigen::Vector3d(2, 1, 1).asDiagonal();
    CHECK((sbar(F, polar_decompose(F).R) - diag_stretch(2, 1, 1)).norm() <= 1e-12);
  }

  TEST_CASE("sbar with a stale rotation matches the dense formula") {
    Rng rng(6);
    const Eigen::Matrix3d F = random_matrix(rng, 3, 3) + 2 * Eigen::Matrix3d::Identity();
    const Eigen::Matrix3d R = random_rotation(rng);
    Eigen::Matrix3d M = R.transpose() * F;
    // Element by element, independent of the packing helper.
    const Vec6 expected = (Vec6() << M(0, 0), M(1, 1), M(2, 2), 0.5 * (M(0, 1) + M(1, 0)), 0.5 * (M(0, 2) + M(2, 0)),
                           0.5 * (M(1, 2) + M(2, 1)))
                              .finished();
    CHECK((sbar(F, R) - expected).norm() <= 1e-14);
  }

  TEST_CASE("density values") {
    const LameParameters arap{3.0, 0.0};
    CHECK(psi_density(diag_stretch(2, 1, 1), MaterialModel::kArap, arap, 1.0) == doctest::Approx(3.0));
    const LameParameters fcr{1.0, 2.0};
    CHECK(psi_density(diag_stretch(2, 1, 1), MaterialModel::kFcr, fcr, 1.0) == doctest::Approx(2.0));
    CHECK(psi_density(diag_stretch(2, 1, 1), MaterialModel::kFcr, fcr, 0.5) == doctest::Approx(1.0));
    for (MaterialModel m : kModels) {
      CHECK(psi_density(rest_stretch(), m, {1e4, 3e4}, 1.0) == doctest::Approx(0.0).epsilon(1e-14));
      CHECK(psi_grad(rest_stretch(), m, {1e4, 3e4}, 1.0).norm() <= 1e-10);
    }
  }

  TEST_CASE("densities agree with hand-written formulas") {
    Rng rng(8);
    for (MaterialModel m : kModels) {
      for (int i = 0; i < 20; ++i) {
        const Vec6 s = random_stretch(rng);
        const LameParameters lame{uniform(rng, 0.5, 2.0), uniform(rng, 0.5, 5.0)};
        const double vol = uniform(rng, 0.1, 2.0);
        CHECK(psi_density(s, m, lame, vol) ==
              doctest::Approx(vol * reference_density(unpack_symmetric(s), m, lame.mu, lame.lambda)).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("ARAP gradient at (2,1,1)") {
    const Vec6 g = psi_grad(diag_stretch(2, 1, 1), MaterialModel::kArap, {1.0, 0.0}, 1.0);
    CHECK((g - (Vec6() << 2, 0, 0, 0, 0, 0).finished()).norm() <= 1e-14);
  }

  TEST_CASE("gradients and Hessians match finite differences") {
    Rng rng(9);
    for (MaterialModel m : kModels) {
      for (int i = 0; i < 10; ++i) {
        const Vec6 s = random_stretch(rng, 0.25);
        const LameParameters lame{uniform(rng, 0.5, 2.0), uniform(rng, 0.5, 5.0)};
        const auto f = [&](const Eigen::VectorXd& v) { return psi_density(Vec6(v), m, lame, 1.3); };
        const auto g = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd { return psi_grad(Vec6(v), m, lame, 1.3); };
        CHECK(relative_error(psi_grad(s, m, lame, 1.3), fd_gradient(f, s, 1e-6)) <= 1e-5);
        const Mat6 H = psi_hess(s, m, lame, 1.3);
        CHECK(relative_error(H, fd_jacobian(g, s, 1e-6)) <= 1e-5);
        CHECK((H - H.transpose()).norm() <= 1e-12 * H.norm());
      }
    }
  }

  TEST_CASE("PSD projection") {
    Rng rng(10);
    for (int i = 0; i < 50; ++i) {
      const Vec6 s = random_stretch(rng, 0.8);
      const LameParameters lame{1.0, uniform(rng, 0.0, 10.0)};
      const Mat6 raw = psi_hess(s, MaterialModel::kSnh, lame, 1.0);
      const Mat6 P = psi_hess(s, MaterialModel::kSnh, lame, 1.0, true);
      CHECK((P - P.transpose()).norm() <= 1e-12 * (1.0 + P.norm()));
      CHECK(Eigen::SelfAdjointEigenSolver<Mat6>(P).eigenvalues().minCoeff() >= -1e-12);
      if (Eigen::SelfAdjointEigenSolver<Mat6>(raw).eigenvalues().minCoeff() >= 0.0) {
        CHECK((P - raw).norm() <= 1e-12 * raw.norm());
      }
    }
    // Already PSD: the FCR Hessian is constant and positive.
    const Mat6 fcr = psi_hess(rest_stretch(), MaterialModel::kFcr, {1.0, 2.0}, 1.0);
    CHECK((project_psd(fcr) - fcr).norm() <= 1e-12);
    Mat6 neg = Mat6::Identity();
    neg(2, 2) = -3.0;
    CHECK(project_psd(neg)(2, 2) == doctest::Approx(0.0));
  }

  TEST_CASE("constraint block reproduces sbar and is its derivative") {
    Rng rng(12);
    const TetMesh mesh = jittered_block(rng, {1, 1, 1}, 0.2);
    const auto body = Body::make(mesh, MaterialField::uniform(mesh.num_tets(), {}));
    const int t = 2;
    const auto local = [&](const Eigen::VectorXd& x) {
      Eigen::Matrix<double, 12, 1> xl;
      for (int k = 0; k < 4; ++k) xl.segment<3>(3 * k) = x.segment<3>(3 * mesh.tets(t, k));
      return xl;
    };
    for (int trial = 0; trial < 5; ++trial) {
      const Eigen::Matrix3d R = trial == 0 ? Eigen::Matrix3d::Identity() : random_rotation(rng);
      const Mat6x12 L = constraint_jacobian_block(R, body->ops.shape_gradients[t]);
      const Eigen::VectorXd x = mesh.rest_vector() + random_vector(rng, 3 * mesh.num_vertices(), 0.03);
      // Linear and translation free, so L applied to positions is sbar itself.
      const Vec6 direct = sbar(reference_deformation_gradient(mesh, x, t), R);
      CHECK((L * local(x) - direct).norm() <= 1e-12 * (1.0 + direct.norm()));

      Eigen::Matrix<double, 12, 1> xl = local(x);
      const auto f = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
        Eigen::VectorXd xx = x;
        for (int k = 0; k < 4; ++k) xx.segment<3>(3 * mesh.tets(t, k)) = v.segment<3>(3 * k);
        return sbar(reference_deformation_gradient(mesh, xx, t), R);
      };
      CHECK(relative_error(Eigen::MatrixXd(L), fd_jacobian(f, Eigen::VectorXd(xl), 1e-6)) <= 1e-8);

      // Selection of the tet's rows of J, rotated and symmetrized.
      Eigen::Matrix<double, 9, 12> Jt;
      const Eigen::MatrixXd Jd = Eigen::MatrixXd(body->ops.J);
      for (int k = 0; k < 4; ++k) Jt.middleCols<3>(3 * k) = Jd.block(9 * t, 3 * mesh.tets(t, k), 9, 3);
      Eigen::Matrix<double, 9, 9> RtKron = Eigen::Matrix<double, 9, 9>::Zero();
      for (int b = 0; b < 3; ++b) RtKron.block<3, 3>(3 * b, 3 * b) = R.transpose();
      CHECK((sym_pack_matrix() * RtKron * Jt - L).norm() <= 1e-12 * L.norm());
    }
  }

  TEST_CASE("rotation invariance of the density") {
    Rng rng(13);
    for (MaterialModel m : kModels) {
      for (int i = 0; i < 100; ++i) {
        const Eigen::Matrix3d F = unpack_symmetric(random_stretch(rng, 0.3)) * random_rotation(rng);
        const Eigen::Matrix3d Q = random_rotation(rng);
        const double a = psi_density(sbar(F, polar_decompose(F).R), m, {1.0, 4.0}, 1.0);
        const double b = psi_density(sbar(Q * F, polar_decompose(Q * F).R), m, {1.0, 4.0}, 1.0);
        CHECK(std::abs(a - b) <= 1e-10 * std::max(1.0, std::abs(a)));
      }
    }
  }

  TEST_CASE("full-space energy gradient matches finite differences") {
    Rng rng(14);
    const TetMesh mesh = jittered_block(rng, {2, 1, 1}, 0.2);
    const auto body = Body::make(mesh, MaterialField::uniform(mesh.num_tets(), {1e3, 0.3, 1000}));
    const Eigen::VectorXd x = mesh.rest_vector() + random_vector(rng, 3 * mesh.num_vertices(), 0.01);
    for (MaterialModel m : kModels) {
      const auto f = [&](const Eigen::VectorXd& v) { return elastic_energy(*body, m, v); };
      CHECK(relative_error(elastic_gradient(*body, m, x), fd_gradient(f, x, 1e-7)) <= 1e-5);
      CHECK(elastic_gradient(*body, m, mesh.rest_vector()).norm() <= 1e-9);
      CHECK(elastic_energy(*body, m, mesh.rest_vector()) == doctest::Approx(0.0).epsilon(1e-14));
    }
  }

  TEST_CASE("material model names") {
    CHECK(parse_material_model("arap") == MaterialModel::kArap);
    CHECK(parse_material_model("fcr") == MaterialModel::kFcr);
    CHECK(parse_material_model("snh") == MaterialModel::kSnh);
    CHECK(to_string(MaterialModel::kSnh) == "snh");
    CHECK_THROWS(parse_material_model("neo"));
  }
}
