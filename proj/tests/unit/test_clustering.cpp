#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "pm/clustering.hpp"
#include "pm/ndgrad/grad_check.hpp"

using namespace pm;
using ndgrad::ParamSet;
using ndgrad::Tensor;

namespace {

VadeConfig small_config(std::size_t d, std::size_t l, std::size_t k) {
  VadeConfig c;
  c.vae.data_dim = d;
  c.vae.latent_dim = l;
  c.vae.hidden = 8;
  c.vae.blocks = 1;
  c.clusters = k;
  return c;
}

void randomize(ParamSet& p, Rng& rng, Real scale) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    Tensor& t = p.at(i);
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = scale * standard_normal(rng);
  }
}

// Brute-force best matching total.
Real brute_force_best(const Matrix& w) {
  std::vector<std::size_t> perm(std::size_t(w.rows()));
  std::iota(perm.begin(), perm.end(), 0);
  Real best = -1e300;
  do {
    Real s = 0.0;
    for (std::size_t r = 0; r < perm.size(); ++r) s += w(Eigen::Index(r), Eigen::Index(perm[r]));
    best = std::max(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

Real assignment_total(const Matrix& w, const std::vector<std::size_t>& a) {
  Real s = 0.0;
  for (std::size_t r = 0; r < a.size(); ++r) s += w(Eigen::Index(r), Eigen::Index(a[r]));
  return s;
}

}  // namespace

TEST_CASE("vade elbo with one standard component is the plain elbo") {
  VadeConfig c = small_config(3, 2, 1);
  Rng rng(1);
  VadeModel m = VadeModel::init(c, rng);
  randomize(m.mutable_vae().mutable_params(), rng, 0.4);
  ParamSet& p = m.mutable_vae().mutable_params();
  p.at("prior/means") = Tensor(1, 2);
  p.at("prior/log_std") = Tensor(1, 2);
  p.at("prior/logits") = Tensor(1, 1);
  const Matrix x = Matrix::Random(5, 3);
  const Matrix eps = Matrix::Random(5, 2);
  const ElboParts a = vade_elbo_with_noise(x, m, 0.7, eps);
  const ElboParts b = elbo_with_noise(x, m.vae(), 0.7, eps);
  CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-12));
  CHECK(std::abs(a.kl - b.kl) < 1e-9);
  CHECK(a.recon == b.recon);
}

TEST_CASE("vade elbo matches a direct evaluation of the mixture form") {
  VadeConfig c = small_config(3, 2, 3);
  Rng rng(2);
  VadeModel m = VadeModel::init(c, rng);
  randomize(m.mutable_vae().mutable_params(), rng, 0.5);
  const GmmPrior prior = m.prior();
  const Matrix x = Matrix::Random(4, 3);
  const Matrix eps = Matrix::Random(4, 2);
  Real recon = 0.0, rest = 0.0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const DiagGaussian q = m.vae().encode(Vector(x.row(r).transpose()));
    const Vector z = q.mean + (q.stddev().array() * eps.row(r).transpose().array()).matrix();
    recon += m.vae().decoder_log_prob_elems(Matrix(z.transpose()), Matrix(x.row(r))).sum();
    // Responsibilities and the expected log density under each component.
    Vector lj(3), e(3);
    for (Eigen::Index k = 0; k < 3; ++k) {
      lj[k] = std::log(prior.weights[k]);
      e[k] = 0.0;
      for (Eigen::Index j = 0; j < 2; ++j) {
        const Real mu = prior.means(k, j), s = prior.stds(k, j);
        lj[k] += -0.5 * std::pow((z[j] - mu) / s, 2) - std::log(s) - 0.5 * kLog2Pi;
        const Real v = std::exp(2 * q.log_std[j]);
        e[k] += -0.5 * (kLog2Pi + 2 * std::log(s) + (v + std::pow(q.mean[j] - mu, 2)) / (s * s));
      }
    }
    const Real lse = log_sum_exp(lj);
    Real term = 0.0;
    for (Eigen::Index k = 0; k < 3; ++k) {
      const Real g = std::exp(lj[k] - lse);
      term += g * (e[k] + std::log(prior.weights[k]) - (lj[k] - lse));
    }
    const Real entropy = q.log_std.sum() + 1.0 * (1.0 + kLog2Pi);
    rest += term + entropy;
  }
  recon /= 4.0;
  rest /= 4.0;
  const ElboParts parts = vade_elbo_with_noise(x, m, 1.0, eps);
  CHECK(parts.recon == doctest::Approx(recon).epsilon(1e-12));
  CHECK(parts.kl == doctest::Approx(-rest).epsilon(1e-10));
  CHECK(parts.loss == doctest::Approx(-recon - rest).epsilon(1e-10));
}

TEST_CASE("vade elbo gradients") {
  Rng rng(3);
  for (std::size_t k : {1, 2, 4}) {
    VadeConfig c = small_config(3, 2, k);
    c.vae.layer_norm = k == 2;
    VadeModel m = VadeModel::init(c, rng);
    randomize(m.mutable_vae().mutable_params(), rng, 0.4);
    const LossGraph lg = build_vade_graph(c);
    std::vector<Tensor> in{Tensor::from_matrix(Matrix::Random(4, 3)),
                           Tensor::from_matrix(Matrix::Random(4, 2)), Tensor::scalar(0.8)};
    const auto report = ndgrad::grad_check_report(lg.graph, m.params(), in, lg.loss, 1e-5);
    CHECK_MESSAGE(report.max_relative_error < 1e-4, "K=" << k << " worst " << report.worst_param);
  }
}

TEST_CASE("symmetric prior gives even responsibilities at the origin") {
  GmmPrior prior;
  prior.weights = Vector::Constant(2, 0.5);
  prior.means = Matrix(2, 2);
  prior.means << 1.5, -0.5, -1.5, 0.5;
  prior.stds = Matrix::Ones(2, 2);
  const Vector g = gmm_component_posterior(Vector::Zero(2), prior);
  CHECK(g[0] == doctest::Approx(0.5).epsilon(1e-15));

  // Partial posterior that ignores the data: mean 0, std 1.
  PoConfig pc;
  pc.data_dim = 3;
  pc.latent_dim = 2;
  pc.hidden = 0;
  pc.blocks = 0;
  ParamSet p;
  p.add("po/out/w", Tensor(6, 4));
  p.add("po/out/b", Tensor(1, 4));
  const PoModel po(pc, p);
  Rng rng(4);
  const PartialObservation obs{Vector::Zero(3), ObservationMask::none(3)};
  const Vector post = cluster_posterior_partial(po, prior, obs, 1000, rng);
  CHECK(std::abs(post.sum() - 1.0) < 1e-9);
  CHECK(std::abs(post[0] - 0.5) < 0.1);
  CHECK(std::abs(post[1] - 0.5) < 0.1);

  GmmPrior one;
  one.weights = Vector::Ones(1);
  one.means = Matrix::Zero(1, 2);
  one.stds = Matrix::Ones(1, 2);
  CHECK(cluster_posterior_partial(po, one, obs, 3, rng)[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(cluster_posterior_partial(po, one, obs, 0, rng), ValidationError);

  Vector tie(3);
  tie << 0.4, 0.4, 0.2;
  CHECK(predict_cluster(tie) == 0);
}

TEST_CASE("clustering accuracy") {
  CHECK(clustering_accuracy({2, 2, 0, 1, 1}, {0, 0, 1, 2, 2}) == 1.0);
  CHECK(clustering_accuracy({3, 3, 3, 3}, {0, 1, 0, 1}) == 0.5);
  CHECK(clustering_accuracy({0, 1, 2, 3}, {0, 0, 0, 0}) == 0.25);
  CHECK_THROWS_AS(clustering_accuracy({}, {}), ValidationError);
  CHECK_THROWS_AS(clustering_accuracy({0}, {0, 1}), ValidationError);

  Rng rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    const int k = 2 + trial % 5, n = 60;
    std::vector<int> pred(n), lab(n);
    Matrix confusion = Matrix::Zero(k, k);
    for (int i = 0; i < n; ++i) {
      pred[i] = int(rng() % std::uint64_t(k));
      lab[i] = int(rng() % std::uint64_t(k));
    }
    // Make sure every class appears so the confusion matrix is k x k.
    for (int c = 0; c < k; ++c) pred[c] = lab[c] = c;
    for (int i = 0; i < n; ++i) confusion(pred[i], lab[i]) += 1.0;
    CHECK(clustering_accuracy(pred, lab) == doctest::Approx(brute_force_best(confusion) / n));
    // Relabeling predictions leaves the accuracy unchanged.
    std::vector<int> relabel(k);
    std::iota(relabel.begin(), relabel.end(), 0);
    std::shuffle(relabel.begin(), relabel.end(), rng);
    std::vector<int> shifted(n);
    for (int i = 0; i < n; ++i) shifted[i] = relabel[pred[i]] + 10;
    CHECK(clustering_accuracy(shifted, lab) == clustering_accuracy(pred, lab));
  }
}

TEST_CASE("hungarian assignment is optimal") {
  Rng rng(6);
  for (int n = 1; n <= 7; ++n) {
    for (int trial = 0; trial < 10; ++trial) {
      Matrix w(n, n);
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = Real(rng() % 20);
      const auto a = hungarian_assignment(w);
      std::vector<std::size_t> sorted = a;
      std::sort(sorted.begin(), sorted.end());
      for (int i = 0; i < n; ++i) CHECK(sorted[std::size_t(i)] == std::size_t(i));
      CHECK(assignment_total(w, a) == brute_force_best(w));
    }
  }
  // Above the exhaustive limit: a diagonal-dominant matrix is solved by identity.
  Matrix w = Matrix::Ones(12, 12) + 5.0 * Matrix::Identity(12, 12);
  const auto a = max_weight_assignment(w);
  for (std::size_t i = 0; i < 12; ++i) CHECK(a[i] == i);
}

TEST_CASE("vade clusters a two-component toy and partial posteriors agree") {
  GmmSpec spec;
  spec.components = 2;
  spec.dim = 4;
  spec.instances = 4000;
  spec.separation = 3.0;
  Rng data_rng(21);
  const GeneratedGmm gen = gen_gmm(spec, data_rng);
  const Dataset test = sample_oracle(gen.oracle, 400, data_rng);

  VadeConfig c;
  c.vae.data_dim = 4;
  c.vae.latent_dim = 2;
  c.vae.hidden = 32;
  c.vae.blocks = 1;
  c.clusters = 2;
  VaeTrainConfig tc;
  tc.trainer.steps = 3000;
  tc.trainer.batch_size = 64;
  tc.trainer.log_every = 1000;
  tc.adam.base_lr = 3e-3;
  tc.seed = 4;
  const TrainedVade vade = train_vade(gen.data, c, tc);

  Rng rng(8);
  std::vector<int> full_pred;
  for (std::size_t i = 0; i < test.size(); ++i) {
    full_pred.push_back(predict_cluster(cluster_posterior_full(vade.model, test.instance(i), 50, rng)));
  }
  const Real acc = clustering_accuracy(full_pred, test.labels);
  CHECK(acc >= 0.95);

  PoConfig pc;
  pc.data_dim = 4;
  pc.latent_dim = 2;
  pc.hidden = 32;
  pc.blocks = 1;
  PmTrainConfig pm;
  pm.trainer.steps = 3000;
  pm.trainer.batch_size = 64;
  pm.trainer.log_every = 1000;
  pm.adam.base_lr = 3e-3;
  pm.masks.kind = MaskSampler::Kind::uniform_fraction;
  pm.mode.freeze_vae = true;
  pm.seed = 5;
  const TrainedPm trained = train_pm(gen.data, vade.model.vae(), pc, pm, vade_elbo_fragment(c));
  CHECK(trained.vae.params().at("prior/means").storage() == vade.model.params().at("prior/means").storage());

  const GmmPrior prior = vade.model.prior();
  std::size_t agree = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const Vector post =
        cluster_posterior_partial(trained.po, prior, {test.instance(i), ObservationMask::full(4)}, 50, rng);
    CHECK(std::abs(post.sum() - 1.0) < 1e-9);
    if (predict_cluster(post) == full_pred[i]) ++agree;
  }
  CHECK(Real(agree) / Real(test.size()) >= 0.98);

  // Checkpoint round trip.
  Checkpoint ck = make_vade_checkpoint(vade, 4);
  const VadeModel back = vade_from_checkpoint(ck);
  CHECK(back.prior().means == prior.means);
  CHECK_THROWS_AS(vade_from_checkpoint(make_vae_checkpoint({vade.model.vae(), vade.optimizer, vade.rng, {}}, 4)),
                  ValidationError);
}

TEST_CASE("vade validation") {
  VadeConfig c = small_config(3, 2, 0);
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c.clusters = 2;
  Rng rng(1);
  VadeModel m = VadeModel::init(c, rng);
  ParamSet p = m.params();
  p.at("prior/means") = Tensor(1, 3);
  CHECK_THROWS_AS(VadeModel(c, p), ShapeError);
  CHECK(VadeConfig::from_json(c.to_json()).clusters == 2);
  CHECK_THROWS_AS(VadeConfig::from_json(nlohmann::json{{"clusters", 2}}), ValidationError);
  Dataset empty;
  empty.x = Matrix(0, 3);
  CHECK_THROWS_AS(train_vade(empty, c, {}), ValidationError);
}
