#include "linear_oracle.hpp"
#include "nekf/elbo.hpp"
#include "nekf/errors.hpp"
#include "reference_net.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <numbers>

using namespace nekf;
using namespace nekf::testing;

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

double ref_log_density(const Vector& x, const Vector& mu, const Matrix& cov) {
  const Vector r = x - mu;
  return -0.5 * (std::log(cov.determinant()) + r.dot(cov.inverse() * r) +
                 static_cast<double>(x.size()) * kLog2Pi);
}

double ref_kl(const Vector& mq, const Matrix& sq, const Vector& mp, const Matrix& sp) {
  const Matrix ip = sp.inverse();
  const Vector d = mp - mq;
  return 0.5 * (std::log(sp.determinant() / sq.determinant()) - static_cast<double>(mq.size()) +
                (ip * sq).trace() + d.dot(ip * d));
}

MlpParams random_net(const MlpConfig& cfg, std::uint64_t seed) {
  MlpParams p = init_params(cfg, seed);
  std::mt19937_64 rng(seed + 1);
  for (Matrix& b : p.biases) b = random_matrix(rng, b.rows(), 1, 0.2);
  return p;
}

SmoothedTrace constant_trace(ad::Tape& t, const std::vector<Vector>& means,
                             const std::vector<Matrix>& covs) {
  SmoothedTrace s;
  for (std::size_t i = 0; i < means.size(); ++i) {
    s.smoothed.push_back({t.constant(means[i]), t.constant(covs[i])});
  }
  return s;
}

struct TinyProblem {
  ModelSpec spec;
  ModelParams params;
  Matrix u, x;
};

TinyProblem tiny_problem(Index steps, std::uint64_t seed) {
  TinyProblem p;
  p.spec.latent_dim = 2;
  p.spec.input_dim = 1;
  p.spec.obs_dim = 1;
  p.spec.hidden = {6, 6};
  InitOptions opts;
  opts.transition_output_gain = 0.5;
  p.params = ModelParams::initialize(p.spec, seed, opts);
  std::mt19937_64 rng(seed);
  for (Matrix* m : p.params.tensors()) *m += random_matrix(rng, m->rows(), m->cols(), 0.1);
  p.u = random_matrix(rng, steps, 1);
  p.x = random_matrix(rng, steps, 1);
  return p;
}

double elbo_value(const TinyProblem& p, const ModelParams& params, double alpha) {
  ad::Tape t;
  BoundModel m = BoundModel::bind(t, p.spec, params, false);
  return total_loss(p.u, p.x, m, alpha).total.scalar();
}

}  // namespace

TEST_CASE("reconstruction_term closed forms") {
  ad::Tape t;
  LinearSystem s;
  s.a = s.c = Matrix::Identity(1, 1);
  s.b = Matrix::Zero(1, 0);
  s.q = s.p0 = Matrix::Identity(1, 1);
  s.r = Matrix::Constant(1, 1, 0.25);
  s.m0 = Vector::Zero(1);
  LinearModels lm = bind_linear(t, s);

  // zero residuals and unit predictive covariance
  const Index steps = 6;
  std::vector<Vector> means;
  std::vector<Matrix> covs;
  Matrix x(steps, 1);
  for (Index k = 0; k <= steps; ++k) {
    means.push_back(Vector::Constant(1, 0.3 * static_cast<double>(k)));
    covs.push_back(Matrix::Constant(1, 1, 0.75));
    if (k > 0) x(k - 1, 0) = means.back()(0);
  }
  SmoothedTrace tr = constant_trace(t, means, covs);
  CHECK(reconstruction_term(tr, x, lm.g, lm.r, 0.0).scalar() ==
        doctest::Approx(-static_cast<double>(steps) * 0.5 * kLog2Pi).epsilon(1e-14));

  // single scalar step against the hand-written density
  SmoothedTrace one = constant_trace(t, {Vector::Zero(1), Vector::Constant(1, 0.4)},
                                     {Matrix::Identity(1, 1), Matrix::Constant(1, 1, 0.5)});
  const double var = 0.5 + 0.25;
  const double expected =
      -0.5 * std::log(2.0 * std::numbers::pi * var) - 0.5 * (1.3 - 0.4) * (1.3 - 0.4) / var;
  CHECK(reconstruction_term(one, Matrix::Constant(1, 1, 1.3), lm.g, lm.r, 0.0).scalar() ==
        doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("ELBO terms agree with a direct re-implementation") {
  std::mt19937_64 rng(21);
  const Index nz = 3, nx = 2, steps = 5;
  MlpConfig tcfg{nz + 1, nz, {8, 8}, Activation::Tanh};
  MlpConfig ocfg{nz, nx, {8, 8}, Activation::Tanh};
  ReferenceNet fref{random_net(tcfg, 1)}, gref{random_net(ocfg, 2)};
  const Matrix q = random_spd(rng, nz, 0.05), r = random_spd(rng, nx, 0.05);
  const Matrix u = random_matrix(rng, steps, 1), x = random_matrix(rng, steps, nx);
  std::vector<Vector> means;
  std::vector<Matrix> covs;
  for (Index k = 0; k <= steps; ++k) {
    means.push_back(random_matrix(rng, nz, 1));
    covs.push_back(random_spd(rng, nz, 0.2));
  }

  ad::Tape t;
  TransitionModel f(tcfg, MlpVars::bind(t, fref.p, false), nz, 1, true);
  ObservationModel g(ocfg, MlpVars::bind(t, gref.p, false), nz);
  SmoothedTrace tr = constant_trace(t, means, covs);

  double recon = 0.0, kl = 0.0, over = 0.0;
  Vector mbar = means[0];
  Matrix sbar = covs[0];
  for (Index k = 1; k <= steps; ++k) {
    const auto i = static_cast<std::size_t>(k);
    const Vector xk = x.row(k - 1).transpose();
    const Matrix c = gref.jacobian(means[i], nz);
    recon += ref_log_density(xk, gref.forward(means[i]), c * covs[i] * c.transpose() + r);

    Vector zu(nz + 1);
    zu << means[i - 1], u(k - 1, 0);
    const Matrix a = Matrix::Identity(nz, nz) + fref.jacobian(zu, nz);
    kl += ref_kl(means[i], covs[i], means[i - 1] + fref.forward(zu),
                 a * covs[i - 1] * a.transpose() + q);

    zu << mbar, u(k - 1, 0);
    const Matrix ab = Matrix::Identity(nz, nz) + fref.jacobian(zu, nz);
    mbar = mbar + fref.forward(zu);
    sbar = ab * sbar * ab.transpose() + q;
    const Matrix cb = gref.jacobian(mbar, nz);
    over += ref_log_density(xk, gref.forward(mbar), cb * sbar * cb.transpose() + r);
  }
  const ad::Var qv = t.constant(q), rv = t.constant(r);
  CHECK(std::abs(reconstruction_term(tr, x, g, rv, 0.0).scalar() - recon) <= 1e-10);
  CHECK(std::abs(kl_term(tr, f, qv, u, 0.0).scalar() - kl) <= 1e-10);
  CHECK(std::abs(overshoot_term(tr.smoothed[0], u, x, f, g, qv, rv, 0.0).scalar() - over) <=
        1e-10);
}

TEST_CASE("kl_term closed forms") {
  ad::Tape t;
  SUBCASE("prior reproduces every smoothed marginal") {
    LinearSystem s;
    s.a = (Matrix(2, 2) << 0.9, 0.2, -0.1, 0.8).finished();
    s.b = Matrix::Zero(2, 0);
    s.c = Matrix::Identity(1, 2);
    s.q = 0.1 * Matrix::Identity(2, 2);
    s.r = Matrix::Identity(1, 1);
    s.m0 = (Vector(2) << 1.0, -1.0).finished();
    s.p0 = Matrix::Identity(2, 2);
    LinearModels lm = bind_linear(t, s);
    std::vector<Vector> means{s.m0};
    std::vector<Matrix> covs{s.p0};
    for (int k = 0; k < 7; ++k) {
      means.push_back(s.a * means.back());
      covs.push_back(s.a * covs.back() * s.a.transpose() + s.q);
    }
    SmoothedTrace tr = constant_trace(t, means, covs);
    CHECK(std::abs(kl_term(tr, lm.f, lm.q, Matrix::Zero(7, 0), 0.0).scalar()) <= 1e-9);
  }
  SUBCASE("T = 1 scalar") {
    LinearSystem s;
    s.a = Matrix::Constant(1, 1, 0.5);
    s.c = Matrix::Identity(1, 1);
    s.b = Matrix::Zero(1, 0);
    s.q = Matrix::Constant(1, 1, 0.2);
    s.r = s.p0 = Matrix::Identity(1, 1);
    s.m0 = Vector::Zero(1);
    LinearModels lm = bind_linear(t, s);
    SmoothedTrace tr = constant_trace(t, {Vector::Constant(1, 2.0), Vector::Constant(1, 0.3)},
                                      {Matrix::Constant(1, 1, 0.8), Matrix::Constant(1, 1, 0.4)});
    // prior N(1.0, 0.25 * 0.8 + 0.2 = 0.4), posterior N(0.3, 0.4)
    const double expected = 0.5 * (0.7 * 0.7) / 0.4;
    CHECK(kl_term(tr, lm.f, lm.q, Matrix::Zero(1, 0), 0.0).scalar() ==
          doctest::Approx(expected).epsilon(1e-14));
  }
}

TEST_CASE("overshoot_term closed forms") {
  ad::Tape t;
  SUBCASE("identity dynamics on constant data leave only the normalizer") {
    LinearSystem s;
    s.a = s.c = Matrix::Identity(2, 2);
    s.b = Matrix::Zero(2, 0);
    s.q = 0.01 * Matrix::Identity(2, 2);
    s.r = 0.1 * Matrix::Identity(2, 2);
    s.m0 = (Vector(2) << 0.5, -0.7).finished();
    s.p0 = 0.2 * Matrix::Identity(2, 2);
    LinearModels lm = bind_linear(t, s, true);
    const Index steps = 8;
    Matrix x = s.m0.transpose().replicate(steps, 1);
    const double over = overshoot_term(lm.init, Matrix::Zero(steps, 0), x, lm.f, lm.g, lm.q,
                                       lm.r, 0.0)
                            .scalar();
    double normalizer = 0.0;
    for (Index k = 1; k <= steps; ++k) {
      const Matrix cov = s.p0 + static_cast<double>(k) * s.q + s.r;
      normalizer += -0.5 * (std::log(cov.determinant()) + 2.0 * kLog2Pi);
    }
    CHECK(std::abs(over - normalizer) <= 1e-9);
  }
  SUBCASE("T = 1 coincides with reconstruction on the rollout marginal") {
    MlpConfig tcfg{2, 2, {5}, Activation::Tanh};
    MlpConfig ocfg{2, 1, {5}, Activation::Tanh};
    TransitionModel f(tcfg, MlpVars::bind(t, random_net(tcfg, 3), false), 2, 0, true);
    ObservationModel g(ocfg, MlpVars::bind(t, random_net(ocfg, 4), false), 2);
    const ad::Var q = t.constant(0.05 * Matrix::Identity(2, 2));
    const ad::Var r = t.constant(0.2 * Matrix::Identity(1, 1));
    Gaussian init{t.constant((Vector(2) << 0.1, 0.2).finished()),
                  t.constant(0.3 * Matrix::Identity(2, 2))};
    const Matrix u = Matrix::Zero(1, 0), x = Matrix::Constant(1, 1, 0.9);
    auto steps = rollout(init, u, f, g, q, r);
    SmoothedTrace aligned;
    aligned.smoothed = {init, steps[0].state};
    CHECK(overshoot_term(init, u, x, f, g, q, r).scalar() ==
          reconstruction_term(aligned, x, g, r).scalar());
  }
}

TEST_CASE("total_loss weighting") {
  TinyProblem p = tiny_problem(8, 5);
  ad::Tape t;
  BoundModel m = BoundModel::bind(t, p.spec, p.params, false);
  for (double alpha : {0.0, 0.3, 0.5, 1.0}) {
    LossBreakdown b = total_loss(p.u, p.x, m, alpha);
    const double recon = b.reconstruction.scalar(), over = b.overshoot.scalar();
    const double kl = b.kl.scalar();
    CHECK(std::isfinite(recon));
    CHECK(std::isfinite(over));
    CHECK(kl >= -1e-9);
    CHECK(std::abs(b.total.scalar() - (alpha * recon + (1.0 - alpha) * over - kl)) <= 1e-12);
    if (alpha == 1.0) CHECK(b.total.scalar() == recon - kl);
    if (alpha == 0.0) CHECK(b.total.scalar() == over - kl);
  }
  CHECK_THROWS_AS(total_loss(p.u, p.x, m, 1.5), ContractError);
  CHECK_THROWS_AS(total_loss(p.u, p.x, m, -0.1), ContractError);
}

TEST_CASE("kl_term is non-negative on random models") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    TinyProblem p = tiny_problem(6, 100 + seed);
    ad::Tape t;
    BoundModel m = BoundModel::bind(t, p.spec, p.params, false);
    CHECK(total_loss(p.u, p.x, m, 0.5).kl.scalar() >= -1e-9);
  }
}

TEST_CASE("total_loss gradient on a sampled 20-parameter subset") {
  TinyProblem p = tiny_problem(8, 7);
  ad::Tape t;
  BoundModel m = BoundModel::bind(t, p.spec, p.params, true);
  t.backward(total_loss(p.u, p.x, m, 0.5).total);
  const std::vector<Matrix> grads = m.gradients();

  std::vector<std::pair<std::size_t, Index>> picks;
  std::mt19937_64 rng(99);
  const auto tensors = p.params.tensors();
  while (picks.size() < 20) {
    const std::size_t k = std::uniform_int_distribution<std::size_t>(0, tensors.size() - 1)(rng);
    const Index i = std::uniform_int_distribution<Index>(0, tensors[k]->size() - 1)(rng);
    picks.emplace_back(k, i);
  }
  double worst = 0.0;
  for (auto [k, i] : picks) {
    ModelParams plus = p.params, minus = p.params;
    const double h = 1e-5;
    (*plus.tensors()[k])(i) += h;
    (*minus.tensors()[k])(i) -= h;
    const double fd = (elbo_value(p, plus, 0.5) - elbo_value(p, minus, 0.5)) / (2.0 * h);
    const double an = grads[k](i);
    const double mag = std::max({std::abs(fd), std::abs(an), 1e-6});
    worst = std::max(worst, std::abs(fd - an) / mag);
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("full ELBO gradient over every parameter of a 2-latent T = 5 model") {
  TinyProblem p = tiny_problem(5, 11);
  ad::Tape t;
  BoundModel m = BoundModel::bind(t, p.spec, p.params, true);
  t.backward(total_loss(p.u, p.x, m, 0.5).total);
  const std::vector<Matrix> grads = m.gradients();
  const std::vector<std::string> names = p.params.names();
  const auto tensors = p.params.tensors();
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    double worst = 0.0;
    for (Index i = 0; i < tensors[k]->size(); ++i) {
      ModelParams plus = p.params, minus = p.params;
      const double h = 1e-4;
      (*plus.tensors()[k])(i) += h;
      (*minus.tensors()[k])(i) -= h;
      const double fd = (elbo_value(p, plus, 0.5) - elbo_value(p, minus, 0.5)) / (2.0 * h);
      const double an = grads[k](i);
      const double mag = std::max({std::abs(fd), std::abs(an), 1e-6});
      worst = std::max(worst, std::abs(fd - an) / mag);
    }
    INFO(names[k]);
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("reconstruction grows linearly with sequence length") {
  std::mt19937_64 rng(5);
  LinearSystem s = random_linear_system(rng, 2, 1, 1, 0.8);
  s.r = Matrix::Identity(1, 1);
  // start from the stationary covariance so every step is statistically alike
  Matrix p = Matrix::Identity(2, 2);
  for (int i = 0; i < 500; ++i) p = s.a * p * s.a.transpose() + s.q;
  s.p0 = p;
  s.m0.setZero();
  std::vector<double> magnitude;
  for (Index steps : {4, 8, 16}) {
    double total = 0.0;
    const int draws = 400;
    for (int d = 0; d < draws; ++d) {
      auto [u, x] = simulate_linear(rng, s, steps);
      ad::Tape t;
      LinearModels lm = bind_linear(t, s);
      SmoothedTrace sm = rts_smooth(filter(u, x, lm.f, lm.g, lm.q, lm.r, lm.init));
      total += reconstruction_term(sm, x, lm.g, lm.r).scalar();
    }
    magnitude.push_back(std::abs(total / draws));
  }
  CHECK(magnitude[1] / magnitude[0] == doctest::Approx(2.0).epsilon(0.1));
  CHECK(magnitude[2] / magnitude[1] == doctest::Approx(2.0).epsilon(0.1));
}

TEST_CASE("pipeline failures are labelled") {
  TinyProblem p = tiny_problem(4, 3);
  p.params.log_r(0) = 800.0;  // exp overflows to inf
  ad::Tape t;
  CHECK_THROWS_AS(BoundModel::bind(t, p.spec, p.params, false), NumericalError);

  TinyProblem bad = tiny_problem(4, 3);
  ad::Tape t2;
  BoundModel m = BoundModel::bind(t2, bad.spec, bad.params, false);
  CHECK_THROWS_AS(total_loss(bad.u, Matrix::Zero(4, 2), m, 0.5), DimensionError);
}
