#include <cmath>
#include <filesystem>
#include <limits>
#include <set>

#include "doctest.h"
#include "pm/acquisition.hpp"
#include "pm/ndgrad/grad_check.hpp"

using namespace pm;
using ndgrad::ParamSet;
using ndgrad::Tensor;

namespace {

// Affine VAE with one latent coordinate: decoder x = w z + m + exp(s) eps.
VaeModel affine_vae(const Vector& w, const Vector& m, const Vector& s) {
  const auto d = std::size_t(w.size());
  VaeConfig cfg;
  cfg.data_dim = d;
  cfg.latent_dim = 1;
  cfg.hidden = 0;
  cfg.blocks = 0;
  ParamSet p;
  p.add("enc/out/w", Tensor(d, 2));
  p.add("enc/out/b", Tensor(1, 2));
  p.add("dec/out/w", Tensor::from_matrix(w.transpose()));
  p.add("dec/out/b", Tensor::from_matrix(m.transpose()));
  p.add("dec/log_std", Tensor::from_matrix(s.transpose()));
  return VaeModel(cfg, p);
}

// Diagonal head, one latent: [mean, log_std] = [x*b, b] W + bias.
PoModel affine_po(const Matrix& w, const Vector& bias) {
  PoConfig c;
  c.data_dim = std::size_t(w.rows() / 2);
  c.latent_dim = 1;
  c.hidden = 0;
  c.blocks = 0;
  ParamSet p;
  p.add("po/out/w", Tensor::from_matrix(w));
  p.add("po/out/b", Tensor::from_matrix(bias.transpose()));
  return PoModel(c, p);
}

struct Toy {
  VaeModel vae;
  PoModel po;
};

// Three features. The posterior log-std depends only on which features are
// observed (mask weights beta), so every expected entropy is deterministic.
Toy mask_only_toy(const Vector& beta) {
  Vector w(3), m(3), s(3);
  w << 1.0, -0.5, 2.0;
  m << 0.1, 0.2, -0.3;
  s << -1.0, -0.5, 0.0;
  Matrix pw = Matrix::Zero(6, 2);
  pw.col(0).head(3) << 0.4, -0.2, 0.3;  // mean reads the values
  pw.col(0).tail(3) << 0.1, 0.0, -0.1;
  pw.col(1).tail(3) = beta;             // log-std reads the bits
  Vector pb(2);
  pb << 0.05, 0.2;
  return {affine_vae(w, m, s), affine_po(pw, pb)};
}

Real gaussian_entropy_1d(Real log_std) { return log_std + 0.5 * (1.0 + kLog2Pi); }

PartialObservation observe(const Vector& x, const std::string& bits) {
  return {x, ObservationMask::parse(bits)};
}

}  // namespace

TEST_CASE("expected entropy matches the closed form when it is sample-free") {
  Vector beta(3);
  beta << -0.3, -0.9, -0.6;
  const Toy t = mask_only_toy(beta);
  Vector x(3);
  x << 0.7, -1.2, 0.4;
  Rng rng(3);
  const PartialObservation p = observe(x, "100");
  const Vector h = expected_entropies_sampling(t.vae, t.po, p, 4, rng);
  CHECK(std::isinf(h[0]));
  // log-std = 0.2 + beta_0 + beta_i after revealing i.
  CHECK(h[1] == doctest::Approx(gaussian_entropy_1d(0.2 - 0.3 - 0.9)).epsilon(1e-12));
  CHECK(h[2] == doctest::Approx(gaussian_entropy_1d(0.2 - 0.3 - 0.6)).epsilon(1e-12));
  CHECK(greedy_step_sampling(t.vae, t.po, p, 4, rng) == 1);
  CHECK(expected_entropy_sampling(t.vae, t.po, p, 2, 5, rng) ==
        doctest::Approx(gaussian_entropy_1d(0.2 - 0.3 - 0.6)).epsilon(1e-12));

  // Information gain is the base entropy minus the expected entropy.
  const Vector g = information_gain_sampling(t.vae, t.po, p, 4, rng);
  CHECK(g[1] == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(g[2] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(g[0] == -std::numeric_limits<Real>::infinity());
}

TEST_CASE("expected entropy averages over sampled values of the revealed feature") {
  // log-std = 0.1 + gamma x_2 b_2, so E[H] = const + gamma E[x_2 | x_o] with
  // x_2 = w_2 z + m_2 + noise and z ~ q(z | x_o).
  Vector w(2), m(2), s(2);
  w << 1.0, 1.5;
  m << 0.0, -0.4;
  s << 0.0, std::log(0.5);
  const VaeModel vae = affine_vae(w, m, s);
  Matrix pw = Matrix::Zero(4, 2);
  pw(0, 0) = 0.8;    // mean = 0.8 x_1 + 0.3
  pw(1, 1) = -0.25;  // gamma
  Vector pb(2);
  pb << 0.3, 0.1;
  const PoModel po = affine_po(pw, pb);
  Vector x(2);
  x << 1.1, 0.0;
  const Real mu = 0.8 * 1.1 + 0.3;
  const Real expected = gaussian_entropy_1d(0.1) - 0.25 * (1.5 * mu - 0.4);
  Rng rng(11);
  const std::size_t k = 40000;
  const Real h = expected_entropy_sampling(vae, po, observe(x, "10"), 1, k, rng);
  // sd of gamma x_2 with Var(x_2) = 1.5^2 exp(0.2) + 0.25.
  const Real se = 0.25 * std::sqrt(2.25 * std::exp(0.2) + 0.25) / std::sqrt(Real(k));
  CHECK(std::abs(h - expected) < 4.0 * se);
}

TEST_CASE("greedy steps have the advertised evaluation counts") {
  Vector beta(3);
  beta << -0.3, -0.9, -0.6;
  const Toy t = mask_only_toy(beta);
  Vector x(3);
  x << 0.7, -1.2, 0.4;
  LookaheadConfig lc;
  lc.data_dim = 3;
  lc.latent_dim = 1;
  lc.hidden = 8;
  lc.blocks = 1;
  Rng rng(4);
  const LookaheadModel la = LookaheadModel::init(lc, rng);
  for (const char* bits : {"000", "100", "011"}) {
    const PartialObservation p = observe(x, bits);
    const std::size_t u = p.mask.dim() - p.mask.observed_count();
    for (std::size_t k : {1, 3, 7}) {
      reset_acquisition_counters();
      greedy_step_sampling(t.vae, t.po, p, k, rng);
      CHECK(acquisition_counters().lookahead_posteriors == k * u);
      CHECK(acquisition_counters().trunk_evaluations == 0);
    }
    reset_acquisition_counters();
    greedy_step_lookahead(la, p);
    CHECK(acquisition_counters().trunk_evaluations == 1);
    CHECK(acquisition_counters().lookahead_posteriors == 0);
  }
}

TEST_CASE("ties go to the smallest unobserved index") {
  CHECK(argmin_unobserved(Vector::Constant(4, 1.5), ObservationMask::parse("1000")) == 1);
  Vector s(4);
  s << 0.0, 2.0, 1.0, 1.0;
  CHECK(argmin_unobserved(s, ObservationMask::parse("1000")) == 2);
  CHECK_THROWS_AS(argmin_unobserved(s, ObservationMask::full(4)), ValidationError);
  CHECK_THROWS_AS(argmin_unobserved(s, ObservationMask::none(3)), ShapeError);
  s[3] = std::nan("");
  CHECK_THROWS_AS(argmin_unobserved(s, ObservationMask::parse("1000")), NumericalError);

  // An untrained lookahead network has identical heads.
  LookaheadConfig lc;
  lc.data_dim = 4;
  lc.latent_dim = 2;
  Rng rng(2);
  const LookaheadModel la = LookaheadModel::init(lc, rng);
  CHECK(greedy_step_lookahead(la, observe(Vector::Ones(4), "1010")) == 1);
  const DiagGaussian h = la.head(observe(Vector::Ones(4), "1010"), 3);
  CHECK(h.mean.isZero(0.0));
  CHECK(h.log_std.isZero(0.0));
}

TEST_CASE("lookahead loss equals the sample average of negative log densities") {
  LookaheadConfig lc;
  lc.data_dim = 3;
  lc.latent_dim = 2;
  lc.hidden = 6;
  lc.blocks = 1;
  Rng rng(8);
  LookaheadModel la = LookaheadModel::init(lc, rng);
  // Give the zero-initialized output layer random weights.
  for (const char* name : {"la/out/w", "la/out/b"}) {
    Tensor& t = la.mutable_params().at(name);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.3 * standard_normal(rng);
  }
  const std::size_t k = 5, b = 2;
  Matrix x(2, 3);
  x << 0.2, -1.0, 0.5, 1.3, 0.0, -0.7;
  std::vector<ObservationMask> masks{ObservationMask::parse("100"), ObservationMask::parse("010")};
  // Selected features per row and raw samples.
  std::vector<std::vector<std::size_t>> selected{{1, 2}, {0}};
  LookaheadTargets t{Matrix::Zero(2, 6), Matrix::Zero(2, 6), Matrix::Zero(2, 6)};
  Real oracle = 0.0;
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t i : selected[n]) {
      Matrix z(static_cast<Eigen::Index>(k), 2);
      for (Eigen::Index j = 0; j < z.size(); ++j) z.data()[j] = standard_normal(rng);
      const DiagGaussian q = la.head({x.row(Eigen::Index(n)).transpose(), masks[n]}, i);
      for (Eigen::Index j = 0; j < z.rows(); ++j) oracle -= log_prob(q, z.row(j).transpose()) / Real(k);
      const Vector mean = z.colwise().mean().transpose();
      for (Eigen::Index l = 0; l < 2; ++l) {
        const auto col = Eigen::Index(i) * 2 + l;
        t.weight(Eigen::Index(n), col) = 1.0;
        t.mean(Eigen::Index(n), col) = mean[l];
        t.var(Eigen::Index(n), col) = (z.col(l).array() - mean[l]).square().mean();
      }
    }
  }
  oracle /= Real(b);
  const LossGraph lg = build_lookahead_graph(lc);
  std::vector<Tensor> in{encode_batch(x, masks), Tensor::from_matrix(t.weight),
                         Tensor::from_matrix(t.mean), Tensor::from_matrix(t.var)};
  const Real value = ndgrad::evaluate(lg.graph, la.params(), in)[0].item();
  CHECK(value == doctest::Approx(oracle).epsilon(1e-12));

  const auto report = ndgrad::grad_check_report(lg.graph, la.params(), in, lg.loss, 1e-6);
  CHECK(report.max_relative_error < 1e-4);
}

TEST_CASE("lookahead loss does not reach the VAE or the partial encoder") {
  Vector beta(3);
  beta << -0.3, -0.9, -0.6;
  const Toy t = mask_only_toy(beta);
  LookaheadConfig lc;
  lc.data_dim = 3;
  lc.latent_dim = 1;
  lc.hidden = 4;
  lc.blocks = 1;
  Rng rng(5);
  const LookaheadModel la = LookaheadModel::init(lc, rng);
  Matrix x = Matrix::Random(4, 3);
  std::vector<ObservationMask> masks;
  for (int i = 0; i < 4; ++i) masks.push_back(sample_mask_bernoulli(3, 0.4, rng));
  const LookaheadTargets targets = sample_lookahead_targets(t.vae, t.po, x, masks, 3, 2, rng);
  const LossGraph lg = build_lookahead_graph(lc);
  std::vector<Tensor> in{encode_batch(x, masks), Tensor::from_matrix(targets.weight),
                         Tensor::from_matrix(targets.mean), Tensor::from_matrix(targets.var)};
  const ParamSet all = ParamSet::merged(ParamSet::merged(t.vae.params(), t.po.params()), la.params());
  const auto g = ndgrad::gradient(lg.graph, all, in, lg.loss);
  for (const auto& name : all.names()) {
    if (name.rfind("la/", 0) == 0) continue;
    const Tensor& gt = g.grads.at(name);
    for (std::size_t i = 0; i < gt.size(); ++i) CHECK(gt[i] == 0.0);
  }
  // Subsample size: min(m, |u|) features per row.
  for (std::size_t n = 0; n < masks.size(); ++n) {
    const std::size_t u = 3 - masks[n].observed_count();
    CHECK(std::size_t(targets.weight.row(Eigen::Index(n)).sum()) == std::min<std::size_t>(2, u));
  }
}

TEST_CASE("trained lookahead heads recover the post-acquisition posteriors") {
  // q(z | x_o) here does not depend on the observed values through its
  // log-std, and its mean is affine in the bits only, so revealing feature
  // i yields a fixed Gaussian. An affine lookahead head can match it.
  Vector w(3), m(3), s(3);
  w << 1.0, -0.5, 2.0;
  m << 0.1, 0.2, -0.3;
  s << -1.0, -0.5, 0.0;
  Matrix pw = Matrix::Zero(6, 2);
  pw.col(0).tail(3) << 0.5, -0.4, 0.2;
  pw.col(1).tail(3) << -0.3, -0.9, -0.6;
  Vector pb(2);
  pb << 0.05, 0.2;
  const VaeModel vae = affine_vae(w, m, s);
  const PoModel po = affine_po(pw, pb);

  Dataset data;
  Rng data_rng(1);
  data.x = Matrix(512, 3);
  for (Eigen::Index i = 0; i < data.x.size(); ++i) data.x.data()[i] = standard_normal(data_rng);

  LookaheadConfig lc;
  lc.data_dim = 3;
  lc.latent_dim = 1;
  lc.hidden = 0;
  lc.blocks = 0;
  LookaheadTrainConfig tc;
  tc.trainer.steps = 4000;
  tc.trainer.batch_size = 32;
  tc.trainer.precision = Precision::f64;
  tc.trainer.log_every = 2000;
  tc.adam.base_lr = 0.02;
  tc.adam.decay_rate = 0.5;  // anneal so the final iterate is not dominated by step noise
  tc.adam.decay_every = 1000;
  tc.samples = 16;
  tc.subsample = 3;
  tc.seed = 9;
  const TrainedLookahead trained = train_lookahead(data, vae, po, lc, tc);
  CHECK(trained.metrics.size() == 2);

  Rng rng(2);
  for (const char* bits : {"000", "100", "010", "001", "110"}) {
    const PartialObservation p = observe(Vector::Zero(3), bits);
    const Vector hl = trained.model.entropies(p);
    for (std::size_t i = 0; i < 3; ++i) {
      if (p.mask.observed(i)) continue;
      Real log_std = pb[1] + pw(3 + Eigen::Index(i), 1);
      for (std::size_t j = 0; j < 3; ++j) {
        if (p.mask.observed(j)) log_std += pw(3 + Eigen::Index(j), 1);
      }
      CHECK(std::abs(hl[Eigen::Index(i)] - gaussian_entropy_1d(log_std)) < 0.03);
    }
    if (p.mask.observed_count() < 3) {
      CHECK(greedy_step_lookahead(trained.model, p) == greedy_step_sampling(vae, po, p, 4, rng));
    }
  }

  // Same seed, same parameters.
  const TrainedLookahead again = train_lookahead(data, vae, po, lc, tc);
  CHECK(again.model.params().at("la/out/w").storage() == trained.model.params().at("la/out/w").storage());

  const auto dir = std::filesystem::temp_directory_path() / "pm_test_lookahead";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "la").string();
  save_checkpoint(make_lookahead_checkpoint(trained, 9, "abc"), path);
  const LookaheadModel loaded = lookahead_from_checkpoint(load_checkpoint(path));
  const PartialObservation p = observe(Vector::Zero(3), "100");
  const Vector h1 = loaded.entropies(p), h2 = trained.model.entropies(p);
  CHECK((h1 - h2).cwiseAbs().maxCoeff() < 1e-5);  // float32 storage
  std::filesystem::remove_all(dir);
}

TEST_CASE("episodes reveal distinct features and end at zero error") {
  Vector beta(3);
  beta << -0.3, -0.9, -0.6;
  const Toy t = mask_only_toy(beta);
  Vector x(3);
  x << 0.7, -1.2, 0.4;
  LookaheadConfig lc;
  lc.data_dim = 3;
  lc.latent_dim = 1;
  Rng init_rng(1);
  const LookaheadModel la = LookaheadModel::init(lc, init_rng);
  for (AcquisitionPolicy policy :
       {AcquisitionPolicy::random, AcquisitionPolicy::sampling, AcquisitionPolicy::lookahead}) {
    EpisodeConfig ec;
    ec.policy = policy;
    ec.budget = 3;
    ec.samples = 3;
    Rng rng(7);
    const AcquisitionTrajectory tr = run_episode(t.vae, t.po, &la, x, ObservationMask::none(3), ec, rng);
    REQUIRE(tr.rmse.size() == 4);
    CHECK(tr.select_seconds.size() == 3);
    CHECK(std::set<std::size_t>(tr.acquired.begin(), tr.acquired.end()).size() == 3);
    CHECK(tr.rmse.back() == 0.0);
    const auto recs = tr.records(5);
    REQUIRE(recs.size() == 4);
    CHECK(recs[0]["chosen_index"].is_null());
    CHECK(recs[2]["chosen_index"] == tr.acquired[1]);
    CHECK(recs[2]["instance_id"] == 5);
    CHECK(recs[3]["rmse"] == 0.0);
    if (policy == AcquisitionPolicy::sampling) {
      // Smallest beta first.
      CHECK(tr.acquired == std::vector<std::size_t>{1, 2, 0});
    }
  }
  // Same seed, same random trajectory.
  EpisodeConfig ec;
  ec.policy = AcquisitionPolicy::random;
  ec.budget = 2;
  Rng r1(3), r2(3);
  CHECK(run_episode(t.vae, t.po, nullptr, x, ObservationMask::none(3), ec, r1).acquired ==
        run_episode(t.vae, t.po, nullptr, x, ObservationMask::none(3), ec, r2).acquired);

  Rng rng(1);
  ec.budget = 3;
  CHECK_THROWS_AS(run_episode(t.vae, t.po, nullptr, x, ObservationMask::parse("100"), ec, rng),
                  ValidationError);
  ec.budget = 1;
  ec.policy = AcquisitionPolicy::lookahead;
  CHECK_THROWS_AS(run_episode(t.vae, t.po, nullptr, x, ObservationMask::none(3), ec, rng),
                  ValidationError);
  CHECK_THROWS_AS(expected_entropy_sampling(t.vae, t.po, observe(x, "100"), 0, 3, rng), ValidationError);
  CHECK_THROWS_AS(expected_entropy_sampling(t.vae, t.po, observe(x, "000"), 0, 0, rng), ValidationError);
  CHECK_THROWS_AS(parse_policy("greedy"), ValidationError);
  CHECK(parse_policy(to_string(AcquisitionPolicy::lookahead)) == AcquisitionPolicy::lookahead);
}

TEST_CASE("linear fit and timing report") {
  const LinearFit f = fit_linear({1, 2, 3, 4}, {3, 5, 7, 9});
  CHECK(f.slope == doctest::Approx(2.0));
  CHECK(f.intercept == doctest::Approx(1.0));
  CHECK(f.r2 == doctest::Approx(1.0));
  const LinearFit g = fit_linear({0, 1, 2, 3}, {0, 1, 0, 1});
  CHECK(g.r2 == doctest::Approx(0.2));  // slope 0.4, SSres 0.8, SStot 1
  CHECK_THROWS_AS(fit_linear({1, 1}, {2, 3}), ValidationError);

  Vector beta(3);
  beta << -0.3, -0.9, -0.6;
  const Toy t = mask_only_toy(beta);
  LookaheadConfig lc;
  lc.data_dim = 3;
  lc.latent_dim = 1;
  Rng rng(1);
  const LookaheadModel la = LookaheadModel::init(lc, rng);
  const BenchReport r = bench_acquisition(t.vae, t.po, la, observe(Vector::Zero(3), "000"), 4, 3, rng);
  CHECK(r.sampling.mean > 0.0);
  CHECK(r.lookahead.mean > 0.0);
  CHECK(r.unobserved == 3);
  CHECK(r.to_json().contains("ratio"));
}
