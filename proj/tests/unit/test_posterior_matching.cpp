#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "pm/ndgrad/grad_check.hpp"
#include "pm/posterior_matching.hpp"

using namespace pm;
using ndgrad::ParamSet;
using ndgrad::Tensor;
namespace fs = std::filesystem;

namespace {

void jitter(ParamSet& params, Real scale, Rng& rng) {
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (Real& v : params.at(k).storage()) v += scale * standard_normal(rng);
  }
}

PoConfig small_po(std::size_t d, std::size_t l, HeadKind head) {
  PoConfig c;
  c.data_dim = d;
  c.latent_dim = l;
  c.head = head;
  c.hidden = 8;
  c.blocks = 1;
  c.components = 3;
  c.cond_dim = 5;
  c.ar_hidden = 8;
  c.ar_blocks = 1;
  return c;
}

VaeConfig small_vae(std::size_t d, std::size_t l) {
  VaeConfig c;
  c.data_dim = d;
  c.latent_dim = l;
  c.hidden = 8;
  c.blocks = 1;
  return c;
}

PartialObservation partial(const Vector& x, const std::string& bits) {
  return {x, ObservationMask::parse(bits)};
}

Real standard_normal_log_pdf(const Vector& z) {
  return -0.5 * z.squaredNorm() - 0.5 * Real(z.size()) * kLog2Pi;
}

}  // namespace

TEST_CASE("untrained heads are the standard normal") {
  Rng rng(1);
  Vector x(3);
  x << 0.5, -1.0, 2.0;
  for (HeadKind head : {HeadKind::diag, HeadKind::full_cov, HeadKind::autoregressive}) {
    PoModel po = PoModel::init(small_po(3, 2, head), rng);
    PoPosterior q = po.posterior(partial(x, "101"));
    for (int t = 0; t < 5; ++t) {
      Vector z = standard_normal_vector(2, rng);
      CHECK(q.log_prob(z) == doctest::Approx(standard_normal_log_pdf(z)).epsilon(1e-12));
    }
    if (head == HeadKind::diag) {
      CHECK(q.diag().mean.isZero(0.0));
      CHECK(q.diag().log_std.isZero(0.0));
    }
  }
  // One coordinate, one component: plain Gaussian log-pdf.
  PoConfig c = small_po(2, 1, HeadKind::autoregressive);
  c.components = 1;
  PoModel ar = PoModel::init(c, rng);
  Vector zero = Vector::Zero(1);
  CHECK(ar_log_prob(ar, partial(Vector::Zero(2), "10"), zero) == doctest::Approx(-0.91894).epsilon(1e-5));
  PoModel diag = PoModel::init(small_po(2, 1, HeadKind::diag), rng);
  CHECK_THROWS_AS(ar_log_prob(diag, partial(Vector::Zero(2), "10"), zero), ValidationError);
  CHECK_THROWS_AS(ar_sample(diag, partial(Vector::Zero(2), "10"), rng), ValidationError);
}

TEST_CASE("matched heads give -log q_psi at the mean") {
  // Affine encoder and an affine trunk that copies it for a full mask.
  VaeConfig vc;
  vc.data_dim = 2;
  vc.latent_dim = 2;
  vc.hidden = 0;
  vc.blocks = 0;
  Rng rng(4);
  VaeModel vae = VaeModel::init(vc, rng);
  PoConfig pc = small_po(2, 2, HeadKind::diag);
  pc.hidden = 0;
  pc.blocks = 0;
  ParamSet pp;
  Tensor w(4, 4);
  const Tensor& ew = vae.params().at("enc/out/w");
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t col = 0; col < 4; ++col) w(r, col) = ew(r, col);
  }
  pp.add("po/out/w", w);
  pp.add("po/out/b", vae.params().at("enc/out/b"));
  PoModel po(pc, pp);

  Matrix x(3, 2);
  x << 0.3, -0.7, 1.1, 0.2, -2.0, 0.5;
  std::vector<ObservationMask> full(3, ObservationMask::full(2));
  const Real loss = pm_loss_with_noise(x, full, vae, po, Matrix::Zero(3, 2));
  Matrix mean, log_std;
  vae.encode(x, mean, log_std);
  Real expected = 0.0;
  for (Eigen::Index r = 0; r < 3; ++r) {
    DiagGaussian q{mean.row(r).transpose(), log_std.row(r).transpose()};
    expected -= log_prob(q, q.mean);
  }
  CHECK(loss == doctest::Approx(expected / 3.0).epsilon(1e-12));
}

TEST_CASE("posterior matching gradients") {
  Rng rng(9);
  const VaeConfig vc = small_vae(4, 3);
  Matrix x = Matrix::Random(5, 4);
  std::vector<ObservationMask> masks;
  for (int i = 0; i < 5; ++i) masks.push_back(sample_mask_bernoulli(4, 0.5, rng));
  for (HeadKind head : {HeadKind::diag, HeadKind::full_cov, HeadKind::autoregressive}) {
    // Stop-gradient deliberately disagrees with finite differences, so the
    // check runs with gradients flowing through z.
    {
      const bool stop = false;
      PmTrainMode mode;
      mode.stop_gradient_on_z = stop;
      mode.joint_elbo_weight = 0.7;
      LossGraph lg = build_pm_graph(vc, small_po(4, 3, head), mode);
      ParamSet params;
      init_vae_params(params, vc, rng);
      init_po_params(params, small_po(4, 3, head), rng);
      jitter(params, 0.1, rng);
      std::vector<Tensor> in{to_tensor(x), mask_tensor(masks), noise_tensor(5, 3, rng), Tensor::scalar(0.8)};
      auto report = ndgrad::grad_check_report(lg.graph, params, in, lg.loss, 1e-5);
      INFO(to_string(head) << " stop=" << stop << " worst " << report.worst_param);
      CHECK(report.max_relative_error < 1e-4);
    }
  }
}

TEST_CASE("stop-gradient leaves the VAE without gradient") {
  Rng rng(2);
  const VaeConfig vc = small_vae(3, 2);
  PmTrainMode mode;
  mode.freeze_vae = true;
  LossGraph lg = build_pm_graph(vc, small_po(3, 2, HeadKind::full_cov), mode);
  ParamSet params;
  init_vae_params(params, vc, rng);
  init_po_params(params, small_po(3, 2, HeadKind::full_cov), rng);
  jitter(params, 0.1, rng);
  std::vector<ObservationMask> masks{ObservationMask::parse("110"), ObservationMask::parse("001")};
  std::vector<Tensor> in{to_tensor(Matrix::Random(2, 3)), mask_tensor(masks), noise_tensor(2, 2, rng),
                         Tensor::scalar(1.0)};
  auto g = ndgrad::gradient(lg.graph, params, in, lg.loss);
  Real vae_grad = 0.0, po_grad = 0.0;
  for (std::size_t k = 0; k < g.grads.size(); ++k) {
    const Real s = g.grads.at(k).mat().cwiseAbs().sum();
    (g.grads.name(k).rfind("po", 0) == 0 ? po_grad : vae_grad) += s;
  }
  CHECK(vae_grad == 0.0);
  CHECK(po_grad > 0.0);

  PmTrainMode bad;
  bad.freeze_vae = true;
  bad.stop_gradient_on_z = false;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("full covariance posterior agrees with its Gaussian") {
  Rng rng(6);
  PoConfig c = small_po(3, 3, HeadKind::full_cov);
  PoModel init = PoModel::init(c, rng);
  ParamSet p = init.params();
  jitter(p, 0.3, rng);
  PoModel po(c, p);
  Vector x(3);
  x << 1.0, 0.2, -0.4;
  PoPosterior q = po.posterior(partial(x, "011"));
  const FullCovGaussian& g = q.full_cov();
  CHECK((g.chol_lower.diagonal().array() > 0).all());
  Matrix z = Matrix::Random(4, 3);
  Tensor enc = Tensor::from_matrix(encode_partial(partial(x, "011")).transpose().replicate(4, 1));
  Vector graph_lp = po.log_prob(enc, z);
  for (Eigen::Index r = 0; r < 4; ++r) {
    CHECK(graph_lp[r] == doctest::Approx(log_prob(g, Vector(z.row(r).transpose()))).epsilon(1e-10));
  }
  CHECK(q.entropy(rng) == doctest::Approx(entropy(g)));
}

TEST_CASE("autoregressive sampling matches its density") {
  Rng rng(12);
  PoConfig c = small_po(2, 2, HeadKind::autoregressive);
  c.components = 3;
  PoModel init = PoModel::init(c, rng);
  ParamSet p = init.params();
  jitter(p, 0.4, rng);
  PoModel po(c, p);
  const PartialObservation obs = partial(Vector::Ones(2), "10");

  // Support check over many seeds.
  bool all_finite = true;
  for (std::uint64_t seed = 0; seed < 10000; seed += 1) {
    Rng r(seed);
    Vector z = ar_sample(po, obs, r);
    if (!std::isfinite(ar_log_prob(po, obs, z))) all_finite = false;
    if (!z.allFinite()) all_finite = false;
  }
  CHECK(all_finite);

  // Histogram of 1e5 samples against the density integrated per cell.
  PoPosterior q = po.posterior(obs);
  const std::size_t n = 100000;
  Matrix samples = q.sample(n, rng);
  const Real lo = -8.0, hi = 8.0;
  const int bins = 32;
  const Real width = (hi - lo) / bins;
  Matrix counts = Matrix::Zero(bins, bins);
  std::size_t outside = 0;
  for (Eigen::Index r = 0; r < samples.rows(); ++r) {
    const int i = int(std::floor((samples(r, 0) - lo) / width));
    const int j = int(std::floor((samples(r, 1) - lo) / width));
    if (i < 0 || j < 0 || i >= bins || j >= bins) {
      ++outside;
      continue;
    }
    counts(i, j) += 1.0;
  }
  const int sub = 4;
  Matrix grid(bins * bins * sub * sub, 2);
  Eigen::Index row = 0;
  for (int i = 0; i < bins * sub; ++i) {
    for (int j = 0; j < bins * sub; ++j) {
      grid(row, 0) = lo + (i + 0.5) * width / sub;
      grid(row, 1) = lo + (j + 0.5) * width / sub;
      ++row;
    }
  }
  Vector dens = q.log_prob(grid).array().exp();
  Matrix mass = Matrix::Zero(bins, bins);
  row = 0;
  const Real cell = (width / sub) * (width / sub);
  for (int i = 0; i < bins * sub; ++i) {
    for (int j = 0; j < bins * sub; ++j) mass(i / sub, j / sub) += dens[row++] * cell;
  }
  const Real tv = 0.5 * ((counts / Real(n)) - mass).cwiseAbs().sum() +
                  0.5 * std::abs(Real(outside) / Real(n) - (1.0 - mass.sum()));
  MESSAGE("total variation " << tv << ", grid mass " << mass.sum());
  CHECK(mass.sum() > 0.99);
  CHECK(tv < 0.05);
}

TEST_CASE("empty and full masks reach the moment-matching optimum") {
  // Fixed linear encoder q_psi(z|x) = N(a x + b, s^2). With x observed the
  // optimum is q_psi; with nothing observed it is the Gaussian matching the
  // first two moments of the aggregate posterior.
  const Real a = 0.8, b = -0.3, log_s = std::log(0.5);
  VaeConfig vc;
  vc.data_dim = 1;
  vc.latent_dim = 1;
  vc.hidden = 0;
  vc.blocks = 0;
  ParamSet vp;
  Tensor ew(1, 2), eb(1, 2);
  ew[0] = a;
  eb[0] = b;
  eb[1] = log_s;
  vp.add("enc/out/w", ew);
  vp.add("enc/out/b", eb);
  vp.add("dec/out/w", Tensor(1, 1, 1.0));
  vp.add("dec/out/b", Tensor(1, 1));
  vp.add("dec/log_std", Tensor(1, 1));
  VaeModel vae(vc, vp);

  Rng rng(21);
  Dataset data;
  data.x.resize(4000, 1);
  for (Eigen::Index i = 0; i < data.x.rows(); ++i) data.x(i, 0) = 1.0 + 2.0 * standard_normal(rng);

  PoConfig pc;
  pc.data_dim = 1;
  pc.latent_dim = 1;
  pc.hidden = 0;
  pc.blocks = 0;
  PmTrainConfig tc;
  tc.mode.freeze_vae = true;
  tc.masks.kind = MaskSampler::Kind::bernoulli;
  tc.masks.p = 0.5;
  tc.trainer.steps = 6000;
  tc.trainer.batch_size = 256;
  tc.trainer.precision = Precision::f64;
  tc.trainer.log_every = 500;
  tc.adam.base_lr = 0.02;
  tc.adam.decay_rate = 0.5;
  tc.adam.decay_every = 1000;
  tc.seed = 5;
  TrainedPm t = train_pm(data, vae, pc, tc);
  CHECK(t.vae.params() == vae.params());
  CHECK(t.metrics.front()["pm"].get<Real>() > t.metrics.back()["pm"].get<Real>());

  const Real mx = data.x.col(0).mean();
  const Real vx = (data.x.col(0).array() - mx).square().mean();
  const Real s2 = std::exp(2 * log_s);
  const DiagGaussian empty = t.po.posterior(partial(Vector::Zero(1), "0")).diag();
  CHECK(empty.mean[0] == doctest::Approx(a * mx + b).epsilon(0.03));
  CHECK(std::exp(2 * empty.log_std[0]) == doctest::Approx(s2 + a * a * vx).epsilon(0.03));

  for (Real x : {-2.0, 1.0, 3.0}) {
    Vector xv(1);
    xv << x;
    const DiagGaussian q_po = t.po.posterior(partial(xv, "1")).diag();
    const DiagGaussian q_vae = vae.encode(xv);
    CHECK(kl_diag(q_vae, q_po) < 0.01);
  }
}

TEST_CASE("freezing keeps f64 VAE parameters bit-identical under f32 training") {
  Rng rng(3);
  VaeConfig vc = small_vae(3, 2);
  VaeModel vae = VaeModel::init(vc, rng);
  Dataset data;
  data.x = Matrix::Random(50, 3);
  PmTrainConfig tc;
  tc.mode.freeze_vae = true;
  tc.trainer.steps = 20;
  tc.trainer.batch_size = 16;
  TrainedPm t = train_pm(data, vae, small_po(3, 2, HeadKind::autoregressive), tc);
  CHECK(t.vae.params() == vae.params());
  CHECK(t.optimizer.m.size() == t.po.params().size());

  Dataset empty;
  empty.x = Matrix(0, 3);
  CHECK_THROWS_AS(train_pm(empty, vae, small_po(3, 2, HeadKind::diag), tc), ValidationError);
  CHECK_THROWS_AS(train_pm(data, vae, small_po(4, 2, HeadKind::diag), tc), ValidationError);

  // Joint training moves the VAE.
  tc.mode.freeze_vae = false;
  TrainedPm joint = train_pm(data, vae, small_po(3, 2, HeadKind::diag), tc);
  CHECK_FALSE(joint.vae.params() == vae.params());
  CHECK(joint.metrics.back().contains("recon"));

  // Checkpoint round trip of the posterior network.
  const fs::path dir = fs::temp_directory_path() / "pm_test_po";
  fs::create_directories(dir);
  save_checkpoint(make_po_checkpoint(t, 0, "abc"), (dir / "po").string());
  Checkpoint c = load_checkpoint((dir / "po").string());
  CHECK(c.links["vae_digest"] == "abc");
  CHECK(c.links["head"] == "autoregressive");
  PoModel back = po_from_checkpoint(c);
  CHECK(back.params() == t.po.params());
  CHECK(back.config().to_json() == t.po.config().to_json());
  CHECK_THROWS_AS(vae_from_checkpoint(c), ValidationError);
  fs::remove_all(dir);
}

TEST_CASE("theorem 1 objectives differ by a theta-independent constant") {
  Theorem1Toy toy;
  toy.components = 2;
  toy.unobserved = 1;
  Theorem1Report r = verify_theorem1(toy);
  CHECK(r.objective_gap_variance < 1e-18);
  CHECK(r.gradient_max_diff < 1e-9);
  CHECK(r.objective_a.size() == 10);

  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Theorem1Toy t;
    t.components = 2 + seed % 15;
    t.unobserved = 1 + seed % 4;
    t.seed = seed;
    Theorem1Report rep = verify_theorem1(t);
    CHECK(rep.objective_gap_variance < 1e-15);
    CHECK(rep.gradient_max_diff < 1e-8);
  }

  // Independent gradient of A: softmax(theta) minus the aggregate posterior.
  Rng rng(5);
  Theorem1Toy big;
  big.components = 6;
  big.unobserved = 3;
  Theorem1Tables tables = make_theorem1_tables(big, rng);
  Vector theta = Vector::Random(6);
  Theorem1Values v = theorem1_objectives(tables, theta);
  Vector aggregate = tables.q_psi.transpose() * tables.data;
  CHECK((v.grad_a - (softmax(theta) - aggregate)).cwiseAbs().maxCoeff() < 1e-12);

  // Explicit summation of A.
  Real a = 0.0;
  Vector log_q = theta.array() - log_sum_exp(theta);
  for (Eigen::Index c = 0; c < tables.q_psi.rows(); ++c) {
    for (Eigen::Index z = 0; z < 6; ++z) {
      const Real q = tables.q_psi(c, z);
      a += tables.data[c] * q * (std::log(q) - log_q[z]);
    }
  }
  CHECK(v.a == doctest::Approx(a).epsilon(1e-12));
}

TEST_CASE("theorem 1 at the exact partially observed posterior") {
  Rng rng(8);
  Theorem1Toy toy;
  toy.components = 4;
  toy.unobserved = 3;
  toy.consistent = true;
  Theorem1Tables t = make_theorem1_tables(toy, rng);
  Theorem1Values v = theorem1_objectives(t, t.prior.array().log().matrix());
  CHECK(v.grad_a.cwiseAbs().maxCoeff() < 1e-12);
  const Real entropy = -(t.data.array() * t.data.array().log()).sum();
  CHECK(v.b_first_term == doctest::Approx(entropy).epsilon(1e-12));
  // Any other theta is worse.
  Theorem1Values other = theorem1_objectives(t, Vector::Random(4));
  CHECK(other.a > v.a);

  Theorem1Toy point;
  point.components = 3;
  point.unobserved = 2;
  point.point_mass = true;
  Theorem1Tables pt = make_theorem1_tables(point, rng);
  Eigen::Index hit = 0;
  pt.data.maxCoeff(&hit);
  Vector theta = Vector::Random(3);
  Vector log_q = theta.array() - log_sum_exp(theta);
  Real kl = 0.0;
  for (Eigen::Index z = 0; z < 3; ++z) kl += pt.q_psi(hit, z) * (std::log(pt.q_psi(hit, z)) - log_q[z]);
  CHECK(theorem1_objectives(pt, theta).a == doctest::Approx(kl).epsilon(1e-12));

  Theorem1Toy bad;
  bad.components = 17;
  CHECK_THROWS_AS(verify_theorem1(bad), ValidationError);
  bad.components = 4;
  bad.unobserved = 5;
  CHECK_THROWS_AS(verify_theorem1(bad), ValidationError);
}
