#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "hpalf/objectives.hpp"
#include "hpalf/theory.hpp"
#include "testutil.hpp"

using namespace hpalf;
using testutil::max_rel_grad_err;
using testutil::randomize;

namespace {

int argmax(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

// softmax/sigmoid heads driven by raw parameters, for loss gradient checks
struct Heads {
  ParamTensor<double> logits{"logits", {1, 10}};
  ParamTensor<double> raw_scalar{"raw_scalar", {1}};
  ParamTensor<double> raw_map{"raw_map", {1, 1, 4, 4}};

  int scalar = -1, perspective = -1, map = -1;
  void build(TapeD& t) {
    perspective = t.softmax(t.leaf(logits));
    scalar = t.sigmoid(t.leaf(raw_scalar));
    map = t.sigmoid(t.leaf(raw_map));
  }
};

}  // namespace

TEST_CASE("anchors mirror, normalize and separate") {
  AnchorDistribution r1 = build_anchor(10, +1, 4.0);
  AnchorDistribution r0 = build_anchor(10, -1, 4.0);
  double s1 = 0.0, s0 = 0.0;
  for (int k = 0; k < 10; ++k) {
    CHECK(std::abs(r1.probs[k] - r0.probs[9 - k]) < 1e-12);
    CHECK(r1.probs[k] > 0.0);
    s1 += r1.probs[k];
    s0 += r0.probs[k];
  }
  CHECK(s1 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s0 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(argmax(r1.probs) != argmax(r0.probs));
  CHECK_THROWS_AS(build_anchor(1, +1, 4.0), Error);
  CHECK_THROWS_AS(build_anchor(10, +1, -1.0), Error);
}

TEST_CASE("kl_divergence identities") {
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    std::vector<double> p(8);
    double s = 0.0;
    for (double& x : p) {
      x = rng.uniform(0.01, 1.0);
      s += x;
    }
    for (double& x : p) x /= s;
    CHECK(kl_divergence(p, p) == doctest::Approx(0.0).epsilon(1e-12));
  }
  CHECK(kl_divergence({0.5, 0.5}, {0.25, 0.75}) == doctest::Approx(0.143841).epsilon(1e-5));
  // Gibbs inequality on 1000 random pairs
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> p(5), q(5);
    double sp = 0, sq = 0;
    for (int k = 0; k < 5; ++k) {
      p[k] = rng.uniform(0.001, 1.0);
      q[k] = rng.uniform(0.001, 1.0);
      sp += p[k];
      sq += q[k];
    }
    for (int k = 0; k < 5; ++k) {
      p[k] /= sp;
      q[k] /= sq;
    }
    CHECK(kl_divergence(p, q) >= -1e-14);
  }
  CHECK_THROWS_AS(kl_divergence({0.5, 0.5}, {1.0, 0.0}), Error);
}

TEST_CASE("loss_d_enc hand value in the realness convention") {
  AnchorDistribution r1 = build_anchor(10, +1, 4.0);
  AnchorDistribution r0 = build_anchor(10, -1, 4.0);
  TapeD t;
  int pr = t.input({1, 10}, std::vector<double>(r1.probs.begin(), r1.probs.end()));
  int pf = t.input({1, 10}, std::vector<double>(r0.probs.begin(), r0.probs.end()));
  int sr = t.input({1}, {0.5});
  int sf = t.input({1}, {0.5});
  int loss = loss_d_enc(t, sr, pr, sf, pf, r1, r0, LossConvention::realness);
  CHECK(t.scalar(loss) == doctest::Approx(1.386294).epsilon(1e-6));
}

TEST_CASE("verbatim and realness differ only in KL sign") {
  // sum of the two conventions is -2(log D(x) + log(1-D(G))), independent of
  // the perspectives
  AnchorDistribution r1 = build_anchor(10, +1, 4.0);
  AnchorDistribution r0 = build_anchor(10, -1, 4.0);
  Rng rng(8);
  auto softmax_of = [&](TapeD& t) {
    return t.softmax(t.input({1, 10}, testutil::random_vec(rng, 10)));
  };
  double sums[2];
  for (int trial = 0; trial < 2; ++trial) {
    TapeD t;
    int pr = softmax_of(t);
    int pf = softmax_of(t);
    int sr = t.input({1}, {0.37});
    int sf = t.input({1}, {0.81});
    int lv = loss_d_enc(t, sr, pr, sf, pf, r1, r0, LossConvention::verbatim);
    int lr = loss_d_enc(t, sr, pr, sf, pf, r1, r0, LossConvention::realness);
    sums[trial] = t.scalar(lv) + t.scalar(lr);
  }
  CHECK(sums[0] == doctest::Approx(sums[1]).epsilon(1e-12));
  const double expect = -2.0 * (std::log(0.37) + std::log(1.0 - 0.81));
  CHECK(sums[0] == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("loss_d_dec oracle values") {
  {
    TapeD t;
    int real = t.input({1, 1, 4, 4}, std::vector<double>(16, 0.5));
    int fake = t.input({1, 1, 4, 4}, std::vector<double>(16, 0.5));
    DecLoss l = loss_d_dec(t, real, fake);
    CHECK(t.scalar(l.node) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-9));
    CHECK_FALSE(l.clamped);
  }
  {
    TapeD t;
    int real = t.input({1, 1, 4, 4}, std::vector<double>(16, 1.0 - 1e-7));
    int fake = t.input({1, 1, 4, 4}, std::vector<double>(16, 1e-7));
    DecLoss l = loss_d_dec(t, real, fake);
    CHECK(t.scalar(l.node) < 1e-6);  // perfect-discriminator limit
  }
  {  // clamp flag fires at the boundary
    TapeD t;
    int real = t.input({1, 1, 2, 2}, {1.0, 0.5, 0.5, 0.5});
    int fake = t.input({1, 1, 2, 2}, std::vector<double>(4, 0.5));
    DecLoss l = loss_d_dec(t, real, fake);
    CHECK(l.clamped);
    CHECK(std::isfinite(t.scalar(l.node)));
  }
  {  // permuting pixels leaves the loss unchanged
    Rng rng(5);
    std::vector<double> rm = testutil::random_vec(rng, 16, 0.05, 0.95);
    std::vector<double> fm = testutil::random_vec(rng, 16, 0.05, 0.95);
    TapeD t1;
    DecLoss a = loss_d_dec(t1, t1.input({1, 1, 4, 4}, rm), t1.input({1, 1, 4, 4}, fm));
    std::reverse(rm.begin(), rm.end());
    std::reverse(fm.begin(), fm.end());
    TapeD t2;
    DecLoss b = loss_d_dec(t2, t2.input({1, 1, 4, 4}, rm), t2.input({1, 1, 4, 4}, fm));
    CHECK(t1.scalar(a.node) == doctest::Approx(t2.scalar(b.node)).epsilon(1e-12));
  }
}

TEST_CASE("loss_adv_g hand value and pixel limit") {
  AnchorDistribution r1 = build_anchor(10, +1, 4.0);
  AnchorDistribution r0 = build_anchor(10, -1, 4.0);
  {
    TapeD t;
    int pf = t.input({1, 10}, std::vector<double>(r1.probs.begin(), r1.probs.end()));
    int sf = t.input({1}, {0.5});
    int map = t.input({1, 1, 4, 4}, std::vector<double>(16, 0.5));
    int loss = loss_adv_g(t, sf, pf, map, r1, r0, LossConvention::realness);
    CHECK(t.scalar(loss) == doctest::Approx(1.386294).epsilon(1e-6));
  }
  {
    TapeD t;
    int map = t.input({1, 1, 4, 4}, std::vector<double>(16, 1.0 - 1e-7));
    CHECK(t.scalar(loss_g_pixel(t, map)) < 1e-6);
  }
}

TEST_CASE("loss_tal oracle values") {
  {
    TapeD t;
    auto [d, g] = loss_tal(t, t.input({1}, {0.5}), t.input({1}, {0.5}));
    CHECK(t.scalar(d) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
    CHECK(t.scalar(g) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  {
    TapeD t;
    auto [d, g] = loss_tal(t, t.input({1}, {1.0 - 1e-7}), t.input({1}, {1e-7}));
    (void)g;
    CHECK(t.scalar(d) < 1e-6);
  }
  {  // g decreasing in scalar_fake
    double prev = 1e9;
    for (double s : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      TapeD t;
      auto [d, g] = loss_tal(t, t.input({1}, {0.5}), t.input({1}, {s}));
      (void)d;
      CHECK(t.scalar(g) < prev);
      prev = t.scalar(g);
    }
  }
}

TEST_CASE("loss gradients pass finite differences") {
  AnchorDistribution r1 = build_anchor(10, +1, 4.0);
  AnchorDistribution r0 = build_anchor(10, -1, 4.0);
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(300 + seed);
    Heads real, fake;
    randomize(real.logits, rng);
    randomize(fake.logits, rng);
    randomize(real.raw_scalar, rng);
    randomize(fake.raw_scalar, rng);
    randomize(real.raw_map, rng);
    randomize(fake.raw_map, rng);
    std::vector<ParamTensor<double>*> ps = {&real.logits,     &fake.logits,
                                            &real.raw_scalar, &fake.raw_scalar,
                                            &real.raw_map,    &fake.raw_map};
    const LossConvention conv =
        seed % 2 == 0 ? LossConvention::realness : LossConvention::verbatim;
    auto loss = [&](bool wg) {
      TapeD t;
      real.build(t);
      fake.build(t);
      int denc = loss_d_enc(t, real.scalar, real.perspective, fake.scalar, fake.perspective,
                            r1, r0, conv);
      DecLoss ddec = loss_d_dec(t, real.map, fake.map);
      int adv = loss_adv_g(t, fake.scalar, fake.perspective, fake.map, r1, r0, conv);
      auto [tal_d, tal_g] = loss_tal(t, real.scalar, fake.scalar);
      int root = t.add(t.add(denc, ddec.node), t.add(adv, t.add(tal_d, tal_g)));
      if (wg) t.backward(root);
      return static_cast<double>(t.scalar(root));
    };
    CHECK(max_rel_grad_err(ps, loss) < 1e-4);
  }
}

TEST_CASE("content losses: identity, Parseval equivalence, determinism") {
  SurrogateExtractor<double> phi(99);
  Rng rng(12);
  std::vector<double> a = testutil::random_vec(rng, 2 * 16 * 16, -1.0, 1.0);
  std::vector<double> b = testutil::random_vec(rng, 2 * 16 * 16, -1.0, 1.0);
  {
    TapeD t;
    int xa = t.input({2, 1, 16, 16}, a);
    ContentLoss<double> c = loss_content(t, xa, xa, phi);
    CHECK(t.scalar(c.fmse) == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(t.scalar(c.vgg) == doctest::Approx(0.0).epsilon(1e-14));
  }
  {
    TapeD t;
    int xa = t.input({2, 1, 16, 16}, a);
    int xb = t.input({2, 1, 16, 16}, b);
    ContentLoss<double> c = loss_content(t, xa, xb, phi);
    double direct = 0.0;
    for (size_t i = 0; i < a.size(); ++i) direct += (a[i] - b[i]) * (a[i] - b[i]);
    direct = 0.5 * direct / static_cast<double>(a.size());
    CHECK(std::abs(t.scalar(c.fmse) - direct) < 1e-9);  // Parseval equivalence
  }
  {
    SurrogateExtractor<double> phi2(99);  // same seed, same weights
    TapeD t1, t2;
    ContentLoss<double> c1 =
        loss_content(t1, t1.input({2, 1, 16, 16}, a), t1.input({2, 1, 16, 16}, b), phi);
    ContentLoss<double> c2 =
        loss_content(t2, t2.input({2, 1, 16, 16}, a), t2.input({2, 1, 16, 16}, b), phi2);
    CHECK(t1.scalar(c1.vgg) == t2.scalar(c2.vgg));
  }
}

TEST_CASE("content loss gradient check") {
  SurrogateExtractor<double> phi(4);
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(700 + seed);
    ParamTensor<double> xt("xt", {1, 1, 8, 8}), xr("xr", {1, 1, 8, 8});
    randomize(xt, rng);
    randomize(xr, rng);
    std::vector<ParamTensor<double>*> ps = {&xt, &xr};
    auto loss = [&](bool wg) {
      TapeD t;
      ContentLoss<double> c = loss_content(t, t.leaf(xt), t.leaf(xr), phi);
      int root = loss_total(t, c.fmse, c.vgg, t.input({1}, {0.0}), {15.0, 0.1, 0.0});
      if (wg) t.backward(root);
      return static_cast<double>(t.scalar(root));
    };
    CHECK(max_rel_grad_err(ps, loss) < 1e-4);
  }
}

TEST_CASE("loss_total arithmetic") {
  TapeD t;
  int fmse = t.input({1}, {0.02});
  int vgg = t.input({1}, {0.5});
  int adv = t.input({1}, {1.0});
  CHECK(t.scalar(loss_total(t, fmse, vgg, adv, {15.0, 0.1, 0.0})) ==
        doctest::Approx(1.35).epsilon(1e-12));
  CHECK(t.scalar(loss_total(t, fmse, vgg, adv, {0.0, 0.0, 0.0})) ==
        doctest::Approx(1.0).epsilon(1e-12));
  // linearity in each component
  int fmse2 = t.input({1}, {0.04});
  const double l1 = t.scalar(loss_total(t, fmse, vgg, adv, {15.0, 0.1, 0.0}));
  const double l2 = t.scalar(loss_total(t, fmse2, vgg, adv, {15.0, 0.1, 0.0}));
  CHECK(l2 - l1 == doctest::Approx(15.0 * 0.02).epsilon(1e-9));
}

TEST_CASE("realness D loss is minimized at the anchor over the simplex") {
  // numeric minimization of KL(R1 || d); anchors fixed
  for (int sign : {+1, -1}) {
    AnchorDistribution r = build_anchor(10, sign, 4.0);
    SimplexOptions opts;
    opts.armijo = true;
    opts.max_iters = 200000;
    opts.grad_tol = 1e-12;
    NumericOptimum opt = minimize_neg_log_simplex(r.probs, opts);
    double gap = 0.0;
    for (int k = 0; k < 10; ++k) gap = std::max(gap, std::abs(opt.minimizer[k] - r.probs[k]));
    CHECK(gap < 1e-4);
  }
}
