#include <doctest.h>

#include "a3rnn/errors.hpp"
#include "a3rnn/losses.hpp"
#include "support.hpp"

using namespace a3rnn;
using namespace a3rnn::testing;
using namespace a3rnn::losses;

namespace {

double scalar(const ad::Var& v) { return v.value().item(); }

/// Random [T, K, 2] trajectory whose steps all have length <= max_step.
Tensor bounded_walk(int steps, int points, double max_step, Rng& rng) {
  Tensor pt({steps, points, 2});
  for (int k = 0; k < points; ++k) {
    double x = rng.uniform(0.3, 0.7), y = rng.uniform(0.3, 0.7);
    for (int t = 0; t < steps; ++t) {
      if (t > 0) {
        const double angle = rng.uniform(0, 2 * M_PI), length = rng.uniform(0, max_step);
        x += length * std::cos(angle);
        y += length * std::sin(angle);
      }
      pt.at(t, k, 0) = x;
      pt.at(t, k, 1) = y;
    }
  }
  return pt;
}

}  // namespace

TEST_CASE("body loss: identical sequences, constant offset and loop oracle") {
  Rng rng(51);
  const Tensor truth = random_tensor({6, 4}, rng, 0, 1);
  Tensor aligned({6, 4});
  for (int t = 0; t + 1 < 6; ++t)
    for (int j = 0; j < 4; ++j) aligned.at(t, j) = truth.at(t + 1, j);
  CHECK(scalar(body_loss(ad::Var(aligned), truth)) == 0.0);

  Tensor offset = aligned;
  for (double& v : offset.values()) v += 0.3;
  CHECK(scalar(body_loss(ad::Var(offset), truth)) == doctest::Approx(0.09).epsilon(1e-12));

  for (int trial = 0; trial < 20; ++trial) {
    const Tensor pred = random_tensor({5, 4}, rng), target = random_tensor({5, 4}, rng);
    double acc = 0.0;
    for (int t = 0; t < 4; ++t)
      for (int j = 0; j < 4; ++j) acc += std::pow(pred.at(t, j) - target.at(t + 1, j), 2);
    CHECK(scalar(body_loss(ad::Var(pred), target)) == doctest::Approx(acc / 16).epsilon(1e-12));
  }
  CHECK_THROWS_AS(body_loss(ad::Var(Tensor({5, 4})), Tensor({5, 3})), ContractError);
}

TEST_CASE("reconstruction loss: perfect outputs, foveal averaging and alignment checks") {
  Rng rng(52);
  const Tensor per = random_tensor({2, 3, 64, 64}, rng, 0, 1);
  const Tensor fov = random_tensor({8, 3, 16, 16}, rng, 0, 1);
  const auto perfect = reconstruction_loss(ad::Var(per), per, ad::Var(fov), fov, ad::Var(fov), fov);
  CHECK(scalar(perfect.per) == 0.0);
  CHECK(scalar(perfect.fov_enc) == 0.0);
  CHECK(scalar(perfect.fov_dec) == 0.0);

  const Tensor target = random_tensor({8, 3, 16, 16}, rng, 0, 1);
  const auto terms = reconstruction_loss(ad::Var(per), per, ad::Var(fov), target, ad::Var(fov), fov);
  double mean_of_patches = 0.0;
  for (int k = 0; k < 8; ++k) {
    double patch = 0.0;
    const Tensor a = fov.slice0(k), b = target.slice0(k);
    for (std::size_t i = 0; i < a.size(); ++i) patch += (a[i] - b[i]) * (a[i] - b[i]);
    mean_of_patches += patch / static_cast<double>(a.size()) / 8;
  }
  CHECK(scalar(terms.fov_enc) == doctest::Approx(mean_of_patches).epsilon(1e-12));
  CHECK_THROWS_AS(reconstruction_loss(ad::Var(per), fov, ad::Var(fov), fov, ad::Var(fov), fov), ContractError);
}

TEST_CASE("displacement hinge: static, threshold and beyond") {
  Tensor still({5, 2, 2}, 0.4);
  CHECK(scalar(displacement_hinge(ad::Var(still))) == 0.0);

  Tensor exact({2, 1, 2});
  exact.at(1, 0, 0) = 0.1;
  CHECK(scalar(displacement_hinge(ad::Var(exact))) == 0.0);

  Tensor jump({2, 1, 2});
  jump.at(1, 0, 1) = 0.25;
  CHECK(scalar(displacement_hinge(ad::Var(jump))) == doctest::Approx(0.15).epsilon(1e-12));
}

TEST_CASE("displacement hinge is zero exactly when every step stays within the threshold") {
  Rng rng(53);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor walk = bounded_walk(8, 3, kDisplacementThreshold, rng);
    CHECK(scalar(displacement_hinge(ad::Var(walk))) == 0.0);
    const int t = 1 + static_cast<int>(rng.next() % 7), k = static_cast<int>(rng.next() % 3);
    walk.at(t, k, 0) = walk.at(t - 1, k, 0) + kDisplacementThreshold + rng.uniform(1e-6, 0.3);
    walk.at(t, k, 1) = walk.at(t - 1, k, 1);
    CHECK(scalar(displacement_hinge(ad::Var(walk))) > 0.0);
  }
}

TEST_CASE("bounds penalty: inside, one coordinate out and zero iff inside") {
  CHECK(scalar(bounds_penalty(ad::Var(Tensor({1, 2}, {1.2, 0.5})))) == doctest::Approx(0.04).epsilon(1e-12));
  CHECK(scalar(bounds_penalty(ad::Var(Tensor({2, 2}, {1.2, 0.5, 0.5, 0.5})))) == doctest::Approx(0.02).epsilon(1e-12));
  Rng rng(54);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor pts = random_tensor({3, 4, 2}, rng, 0, 1);
    CHECK(scalar(bounds_penalty(ad::Var(pts))) == 0.0);
    pts[rng.next() % pts.size()] = rng.uniform() < 0.5 ? rng.uniform(-0.5, -1e-6) : rng.uniform(1 + 1e-6, 1.5);
    CHECK(scalar(bounds_penalty(ad::Var(pts))) > 0.0);
  }
}

TEST_CASE("regularization terms on aligned inputs") {
  Rng rng(55);
  const Tensor bu = random_tensor({4, 3, 2}, rng, 0, 1);
  const Tensor fov = random_tensor({6, 3, 8, 8}, rng, 0, 1);
  const Tensor td = bounded_walk(4, 2, 0.05, rng);
  const auto zero = regularization_loss(bu, ad::Var(bu), ad::Var(fov), ad::Var(fov), ad::Var(td), ad::Var(td));
  for (const ad::Var& v : {zero.bu_consist, zero.fov_consist, zero.displacement, zero.bounds_enc, zero.bounds_dec})
    CHECK(scalar(v) == 0.0);
  Tensor shifted = bu;
  for (double& v : shifted.values()) v += 0.1;
  const auto terms = regularization_loss(bu, ad::Var(shifted), ad::Var(fov), ad::Var(fov), ad::Var(td), ad::Var(td));
  CHECK(scalar(terms.bu_consist) == doctest::Approx(0.01).epsilon(1e-9));
  CHECK_THROWS_AS(regularization_loss(bu, ad::Var(Tensor({4, 2, 2})), ad::Var(fov), ad::Var(fov), ad::Var(td), ad::Var(td)),
                  ContractError);
}

TEST_CASE("total loss weights") {
  LossBreakdown b;
  b.body = 0.7;
  b.rec_per = b.rec_fov_enc = b.rec_fov_dec = 0.5;
  CHECK(total_loss(b, {0.0, 0.0}) == 0.7);

  LossBreakdown ones;
  ones.body = ones.rec_per = ones.rec_fov_enc = ones.rec_fov_dec = 1.0;
  ones.reg_bu_consist = ones.reg_fov_consist = ones.reg_displacement = ones.reg_bounds = 1.0;
  CHECK(total_loss(ones, {1.0, 1.0}) == 8.0);

  Rng rng(56);
  for (int trial = 0; trial < 50; ++trial) {
    LossBreakdown r;
    for (double* f : {&r.body, &r.rec_per, &r.rec_fov_enc, &r.rec_fov_dec, &r.reg_bu_consist, &r.reg_fov_consist,
                      &r.reg_displacement, &r.reg_bounds})
      *f = rng.uniform(0, 2);
    const double alpha = rng.uniform(0, 1), beta = rng.uniform(0, 1);
    const double hand = r.body + alpha * (r.rec_per + r.rec_fov_enc + r.rec_fov_dec) +
                        beta * (r.reg_bu_consist + r.reg_fov_consist + r.reg_displacement + r.reg_bounds);
    CHECK(total_loss(r, {alpha, beta}) == doctest::Approx(hand).epsilon(1e-12));
  }
  CHECK_THROWS_AS(total_loss(b, {-0.1, 0.1}), ConfigError);
}

TEST_CASE("loss breakdown survives a JSON round trip") {
  LossBreakdown b;
  b.body = 0.1;
  b.rec_per = 0.2;
  b.reg_bounds_enc = 0.3;
  b.reg_bounds_dec = 1.0 / 3.0;
  b.reg_bounds = b.reg_bounds_enc + b.reg_bounds_dec;
  b.total = 0.123456789012345;
  const LossBreakdown back = loss_from_json(nlohmann::json::parse(to_json(b).dump()));
  CHECK(back.body == b.body);
  CHECK(back.reg_bounds_dec == b.reg_bounds_dec);
  CHECK(back.total == b.total);
}

TEST_CASE("loss term gradients match finite differences") {
  Rng rng(57);
  const ad::Var td(bounded_walk(4, 2, 0.3, rng), true);
  CHECK(fd_check([&] { return displacement_hinge(td); }, {td}).max_rel_error <= 1e-3);
  const ad::Var pts(random_tensor({3, 2}, rng, -0.5, 1.5), true);
  CHECK(fd_check([&] { return bounds_penalty(pts); }, {pts}).max_rel_error <= 1e-3);
  const ad::Var joints(random_tensor({4, 4}, rng), true);
  const Tensor truth = random_tensor({4, 4}, rng);
  CHECK(fd_check([&] { return body_loss(joints, truth); }, {joints}).max_rel_error <= 1e-3);
}
