#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <doctest.h>

#include "asmmd/conformer.hpp"
#include "asmmd/errors.hpp"
#include "asmmd/losses.hpp"
#include "asmmd/rng.hpp"

using namespace asmmd;

namespace {

Tensor random_batch(std::int64_t b, const BackboneConfig& cfg, Rng& rng) {
  Tensor x = Tensor::zeros({b, cfg.n_channels, cfg.n_samples});
  for (double& v : x.data) v = rng.normal();
  return x;
}

// Small enough for finite differences, every block still present.
BackboneConfig tiny_config() {
  BackboneConfig cfg;
  cfg.n_channels = 2;
  cfg.n_samples = 17;
  cfg.d_model = 6;
  cfg.n_heads = 2;
  cfg.head_dim = 3;
  cfg.n_layers = 2;
  cfg.ffn_mult = 2;
  cfg.dropout = 0.0;
  cfg.temporal_kernel = 5;
  cfg.n_temporal_filters = 4;
  cfg.pool_window = 6;
  cfg.pool_stride = 3;
  return cfg;
}

bool tensors_equal(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape &&
         std::memcmp(a.ptr(), b.ptr(),
                     sizeof(double) * static_cast<std::size_t>(a.numel())) == 0;
}

}  // namespace

TEST_CASE("default configuration stays inside the parameter budget") {
  BackboneConfig cfg;
  Model model = Model::build(cfg, 1);
  CHECK(model.parameter_count() == 246162);
  CHECK(model.parameter_count() >= 150000);
  CHECK(model.parameter_count() <= 250000);
}

TEST_CASE("token arithmetic follows the valid-convolution formula") {
  BackboneConfig cfg;
  CHECK(cfg.conv_frames() == 117);
  CHECK(cfg.pooled_tokens() == 3);
  CHECK(cfg.token_count() == 3);

  cfg.single_token_front_end = true;
  CHECK(cfg.token_count() == 1);

  cfg.single_token_front_end = false;
  cfg.pool_window = 117;
  CHECK(cfg.pooled_tokens() == 1);
}

TEST_CASE("config validation rejects impossible geometry") {
  BackboneConfig cfg;
  cfg.validate();

  BackboneConfig bad = cfg;
  bad.temporal_kernel = 142;  // no conv frames left
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.pool_window = 118;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.n_heads = 7;  // does not divide d_model
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.dropout = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.n_classes = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("builds with the same seed are bitwise identical") {
  BackboneConfig cfg = tiny_config();
  Model a = Model::build(cfg, 42);
  Model b = Model::build(cfg, 42);
  Model c = Model::build(cfg, 43);

  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  REQUIRE(pa.size() == pb.size());
  bool all_equal = true, any_differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    all_equal = all_equal && tensors_equal(pa[i].val(), pb[i].val());
    any_differs = any_differs || !tensors_equal(pa[i].val(), pc[i].val());
  }
  CHECK(all_equal);
  CHECK(any_differs);
}

TEST_CASE("forward produces per-trial logits deterministically in eval") {
  BackboneConfig cfg = tiny_config();
  Model model = Model::build(cfg, 7);
  Rng data_rng(3);
  Tensor x = random_batch(5, cfg, data_rng);

  Rng r1(1), r2(999);
  Value z1 = model.forward(x, Domain::target, Mode::eval, r1);
  Value z2 = model.forward(x, Domain::target, Mode::eval, r2);
  REQUIRE(z1.val().shape == std::vector<std::int64_t>({5, 2}));
  CHECK(tensors_equal(z1.val(), z2.val()));
  for (double v : z1.val().data) CHECK(std::isfinite(v));
}

TEST_CASE("train mode with the same rng state repeats exactly") {
  BackboneConfig cfg = tiny_config();
  cfg.dropout = 0.1;
  Rng data_rng(4);
  Tensor x = random_batch(4, cfg, data_rng);

  Model m1 = Model::build(cfg, 7);
  Model m2 = Model::build(cfg, 7);
  Rng r1(11), r2(11);
  Value z1 = m1.forward(x, Domain::source, Mode::train, r1);
  Value z2 = m2.forward(x, Domain::source, Mode::train, r2);
  CHECK(tensors_equal(z1.val(), z2.val()));
}

TEST_CASE("eval permutes with the batch") {
  BackboneConfig cfg = tiny_config();
  Model model = Model::build(cfg, 19);
  Rng data_rng(6);
  Tensor x = random_batch(6, cfg, data_rng);

  Tensor perm = Tensor::zeros(x.shape);
  const std::vector<std::int64_t> order{3, 0, 5, 1, 4, 2};
  const std::int64_t stride = cfg.n_channels * cfg.n_samples;
  for (std::int64_t i = 0; i < 6; ++i) {
    std::memcpy(perm.ptr() + i * stride,
                x.ptr() + order[static_cast<std::size_t>(i)] * stride,
                sizeof(double) * static_cast<std::size_t>(stride));
  }

  Rng r(1);
  Tensor z = model.forward(x, Domain::target, Mode::eval, r).val();
  Tensor zp = model.forward(perm, Domain::target, Mode::eval, r).val();
  for (std::int64_t i = 0; i < 6; ++i) {
    for (std::int64_t c = 0; c < 2; ++c) {
      CHECK(zp.at(i, c) ==
            doctest::Approx(z.at(order[static_cast<std::size_t>(i)], c))
                .epsilon(1e-12));
    }
  }
}

TEST_CASE("train forwards update only the active domain's buffers") {
  BackboneConfig cfg = tiny_config();
  Model model = Model::build(cfg, 23);
  Rng data_rng(8);
  Tensor xs = random_batch(4, cfg, data_rng);
  Tensor xt = random_batch(4, cfg, data_rng);

  const Tensor t_mean_before = model.bn1().running_mean(Domain::target);
  Rng r(2);
  model.forward(xs, Domain::source, Mode::train, r);
  CHECK(tensors_equal(model.bn1().running_mean(Domain::target),
                      t_mean_before));
  CHECK_FALSE(tensors_equal(model.bn1().running_mean(Domain::source),
                            t_mean_before));

  const Tensor s_mean = model.bn1().running_mean(Domain::source);
  model.forward(xt, Domain::target, Mode::train, r);
  CHECK(tensors_equal(model.bn1().running_mean(Domain::source), s_mean));
  CHECK_FALSE(tensors_equal(model.bn1().running_mean(Domain::target),
                            t_mean_before));
}

TEST_CASE("domain choice reaches eval output only through the buffers") {
  BackboneConfig cfg = tiny_config();
  Model model = Model::build(cfg, 29);
  Rng data_rng(9);
  Tensor x = random_batch(3, cfg, data_rng);

  // Make the target buffers differ, then copy them over the source ones.
  Rng r(5);
  model.forward(x, Domain::target, Mode::train, r);
  Value before = model.forward(x, Domain::source, Mode::eval, r);
  CHECK_FALSE(tensors_equal(
      before.val(), model.forward(x, Domain::target, Mode::eval, r).val()));

  for (SplitBatchNorm* bn : {&model.bn1(), &model.bn2()}) {
    bn->mutable_running_mean(Domain::source) =
        bn->running_mean(Domain::target);
    bn->mutable_running_var(Domain::source) = bn->running_var(Domain::target);
  }
  Value zs = model.forward(x, Domain::source, Mode::eval, r);
  Value zt = model.forward(x, Domain::target, Mode::eval, r);
  CHECK(tensors_equal(zs.val(), zt.val()));
}

TEST_CASE("positional encoding changes non-uniform inputs") {
  BackboneConfig cfg = tiny_config();
  Model with_pe = Model::build(cfg, 31);
  cfg.use_positional_encoding = false;
  Model without_pe = Model::build(cfg, 31);

  Rng data_rng(10);
  Tensor x = random_batch(2, cfg, data_rng);
  Rng r(1);
  Tensor za = with_pe.forward(x, Domain::target, Mode::eval, r).val();
  Tensor zb = without_pe.forward(x, Domain::target, Mode::eval, r).val();
  CHECK_FALSE(tensors_equal(za, zb));
}

TEST_CASE("forward rejects mismatched input shapes") {
  BackboneConfig cfg = tiny_config();
  Model model = Model::build(cfg, 3);
  Rng r(1);
  Tensor wrong_ch = Tensor::zeros({2, 3, 17});
  CHECK_THROWS_AS(model.forward(wrong_ch, Domain::source, Mode::eval, r),
                  ShapeError);
  Tensor wrong_t = Tensor::zeros({2, 2, 16});
  CHECK_THROWS_AS(model.forward(wrong_t, Domain::source, Mode::eval, r),
                  ShapeError);
}

TEST_CASE("hidden classifier head is wired in when requested") {
  BackboneConfig cfg = tiny_config();
  cfg.head_hidden = 8;
  Model model = Model::build(cfg, 37);
  Rng data_rng(11);
  Tensor x = random_batch(2, cfg, data_rng);
  Rng r(1);
  Value z = model.forward(x, Domain::target, Mode::eval, r);
  REQUIRE(z.val().shape == std::vector<std::int64_t>({2, 2}));

  BackboneConfig plain = tiny_config();
  Model linear_head = Model::build(plain, 37);
  CHECK(model.parameter_count() > linear_head.parameter_count());
}

TEST_CASE("snapshot and restore round-trip parameters and buffers") {
  BackboneConfig cfg = tiny_config();
  Model model = Model::build(cfg, 41);
  Rng data_rng(12);
  Tensor x = random_batch(4, cfg, data_rng);
  Rng r(2);

  Model::Snapshot snap = model.snapshot();
  Tensor logits_before = model.forward(x, Domain::target, Mode::eval, r).val();

  model.forward(x, Domain::target, Mode::train, r);  // moves BN buffers
  model.parameters()[0].mutable_val()[0] += 0.25;
  CHECK_FALSE(tensors_equal(
      model.forward(x, Domain::target, Mode::eval, r).val(), logits_before));

  model.restore(snap);
  CHECK(tensors_equal(model.forward(x, Domain::target, Mode::eval, r).val(),
                      logits_before));
}

TEST_CASE("checkpoints restore the exact model") {
  const std::string path = "/tmp/asmmd_test_model.asmc";
  BackboneConfig cfg = tiny_config();
  cfg.head_hidden = 4;
  Model model = Model::build(cfg, 47);
  Rng data_rng(13);
  Tensor x = random_batch(3, cfg, data_rng);
  Rng r(2);
  model.forward(x, Domain::source, Mode::train, r);
  model.forward(x, Domain::target, Mode::train, r);
  Tensor logits = model.forward(x, Domain::target, Mode::eval, r).val();

  model.save_checkpoint(path);
  Model back = Model::load_checkpoint(path);
  CHECK(back.config().head_hidden == 4);
  CHECK(back.parameter_count() == model.parameter_count());
  CHECK(tensors_equal(back.forward(x, Domain::target, Mode::eval, r).val(),
                      logits));

  auto pa = model.parameters();
  auto pb = back.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(tensors_equal(pa[i].val(), pb[i].val()));
  }
  std::remove(path.c_str());
}

TEST_CASE("checkpoint loader rejects damaged files") {
  const std::string path = "/tmp/asmmd_test_model_bad.asmc";
  Model model = Model::build(tiny_config(), 53);
  model.save_checkpoint(path);

  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  in.close();

  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    std::string bad = bytes;
    bad[0] = 'Z';
    out.write(bad.data(), static_cast<std::streamsize>(bad.size()));
  }
  CHECK_THROWS_AS(Model::load_checkpoint(path), FormatError);

  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(Model::load_checkpoint(path), FormatError);
  std::remove(path.c_str());
}

TEST_CASE("gradients through the whole backbone pass finite differences") {
  BackboneConfig cfg = tiny_config();
  Model model = Model::build(cfg, 59);
  Rng data_rng(14);
  Tensor x = random_batch(4, cfg, data_rng);
  std::vector<std::int64_t> y{0, 1, 1, 0};

  auto params = model.parameters();
  auto f = [&] {
    Rng fwd_rng(0);
    for (SplitBatchNorm* bn : {&model.bn1(), &model.bn2()}) {
      const std::int64_t width = bn->n_features();
      for (Domain d : {Domain::source, Domain::target}) {
        bn->mutable_running_mean(d) = Tensor::zeros({width});
        bn->mutable_running_var(d) = Tensor::full({width}, 1.0);
      }
    }
    Value z = model.forward(x, Domain::source, Mode::train, fwd_rng);
    return cross_entropy(z, y, 0.1);
  };
  GradCheckResult res = grad_check(f, params);
  INFO("worst parameter ", res.worst_leaf, " over ", res.checked,
       " entries");
  CHECK(res.max_rel_err < 1e-4);
}
