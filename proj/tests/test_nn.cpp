#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <functional>

#include "stainqc/checkpoint.hpp"
#include "stainqc/errors.hpp"
#include "stainqc/nn.hpp"
#include "stainqc/optim.hpp"
#include "stainqc/rng.hpp"
#include "stainqc/vit.hpp"

using namespace stainqc;
using nn::MatX;
using nn::VecX;

namespace {

MatX<double> random_mat(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  MatX<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() * scale;
  return m;
}

/// Central finite differences on sampled entries of every registered tensor.
/// `loss` must recompute the full forward pass from scratch.
void check_param_grads(nn::ParamList<double>& params, const std::function<double()>& loss,
                       const std::function<void()>& analytic_pass, double eps = 1e-5,
                       double tol = 1e-2, int probes = 6) {
  nn::zero_grads(params);
  analytic_pass();
  Rng probe_rng(77);
  for (auto& p : params) {
    const Eigen::Index n = p.value->size();
    for (int k = 0; k < std::min<Eigen::Index>(probes, n); ++k) {
      const Eigen::Index i = static_cast<Eigen::Index>(probe_rng.below(n));
      double* slot = p.value->data() + i;
      const double orig = *slot;
      *slot = orig + eps;
      const double up = loss();
      *slot = orig - eps;
      const double down = loss();
      *slot = orig;
      const double fd = (up - down) / (2 * eps);
      const double an = p.grad->data()[i];
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-4});
      INFO("tensor ", p.name, " entry ", i, " fd=", fd, " analytic=", an);
      CHECK(std::abs(fd - an) / denom < tol);
    }
  }
}

} // namespace

TEST_CASE("linear gradient check") {
  Rng rng(1);
  nn::Linear<double> lin;
  lin.init(7, 5, rng);
  const MatX<double> x = random_mat(4, 7, rng);
  const MatX<double> w = random_mat(4, 5, rng);
  nn::ParamList<double> params;
  lin.params("lin", params);

  typename nn::Linear<double>::Cache cache;
  auto loss = [&] { return (lin.forward(x).array() * w.array()).sum(); };
  auto analytic = [&] {
    lin.forward_train(x, cache);
    lin.backward(w, cache);
  };
  check_param_grads(params, loss, analytic);
}

TEST_CASE("layernorm gradient check (params and input)") {
  Rng rng(2);
  nn::LayerNorm<double> ln;
  ln.init(9);
  MatX<double> x = random_mat(5, 9, rng);
  const MatX<double> w = random_mat(5, 9, rng);
  nn::ParamList<double> params;
  ln.params("ln", params);

  typename nn::LayerNorm<double>::Cache cache;
  MatX<double> dx;
  auto loss = [&] { return (ln.forward(x).array() * w.array()).sum(); };
  auto analytic = [&] {
    ln.forward(x, &cache);
    dx = ln.backward(w, cache);
  };
  check_param_grads(params, loss, analytic);

  // input gradient
  Rng probe(3);
  for (int k = 0; k < 10; ++k) {
    const Eigen::Index i = static_cast<Eigen::Index>(probe.below(x.size()));
    const double eps = 1e-5;
    const double orig = x.data()[i];
    x.data()[i] = orig + eps;
    const double up = loss();
    x.data()[i] = orig - eps;
    const double down = loss();
    x.data()[i] = orig;
    const double fd = (up - down) / (2 * eps);
    CHECK(std::abs(fd - dx.data()[i]) / std::max({std::abs(fd), std::abs(dx.data()[i]), 1e-4}) <
          1e-2);
  }
}

TEST_CASE("batchnorm training/eval semantics and gradients") {
  Rng rng(4);
  nn::BatchNorm1d<double> bn;
  bn.init(6);
  const MatX<double> x = random_mat(16, 6, rng, 2.0);
  typename nn::BatchNorm1d<double>::Cache cache;
  const MatX<double> y = bn.forward_train(x, cache);
  // Batch-normalized output has ~zero mean / unit variance per feature.
  for (int j = 0; j < 6; ++j) {
    CHECK(std::abs(y.col(j).mean()) < 1e-9);
    CHECK((y.col(j).array() - y.col(j).mean()).square().mean() ==
          doctest::Approx(1.0).epsilon(1e-3));
  }
  // Running stats moved toward the batch stats.
  CHECK(bn.running_mean(0, 0) == doctest::Approx(0.1 * x.col(0).mean()).epsilon(1e-9));

  MatX<double> one_row = random_mat(1, 6, rng);
  typename nn::BatchNorm1d<double>::Cache c1;
  CHECK_THROWS_AS(bn.forward_train(one_row, c1), ArgumentError);

  // Gradient check.
  nn::BatchNorm1d<double> bn2;
  bn2.init(6);
  const MatX<double> w = random_mat(16, 6, rng);
  nn::ParamList<double> params;
  bn2.params("bn", params);
  typename nn::BatchNorm1d<double>::Cache cache2;
  auto loss = [&] {
    nn::BatchNorm1d<double> tmp = bn2; // running stats must not accumulate
    typename nn::BatchNorm1d<double>::Cache c;
    return (tmp.forward_train(x, c).array() * w.array()).sum();
  };
  auto analytic = [&] {
    nn::BatchNorm1d<double> tmp = bn2;
    tmp.ggamma.setZero();
    tmp.gbeta.setZero();
    tmp.forward_train(x, cache2);
    tmp.backward(w, cache2);
    bn2.ggamma = tmp.ggamma;
    bn2.gbeta = tmp.gbeta;
  };
  check_param_grads(params, loss, analytic);
}

TEST_CASE("prelu gradient check") {
  Rng rng(5);
  nn::PRelu<double> pr;
  pr.init();
  const MatX<double> x = random_mat(6, 4, rng);
  const MatX<double> w = random_mat(6, 4, rng);
  nn::ParamList<double> params;
  pr.params("pr", params);
  typename nn::PRelu<double>::Cache cache;
  auto loss = [&] { return (pr.forward(x).array() * w.array()).sum(); };
  auto analytic = [&] {
    pr.forward(x, &cache);
    pr.backward(w, cache);
  };
  check_param_grads(params, loss, analytic);
}

TEST_CASE("mlp and attention gradient checks") {
  Rng rng(6);
  Rng dummy(0);

  nn::Mlp<double> mlp;
  mlp.init(8, 16, 0.0, rng);
  const MatX<double> x = random_mat(5, 8, rng);
  const MatX<double> w = random_mat(5, 8, rng);
  nn::ParamList<double> params;
  mlp.params("mlp", params);
  typename nn::Mlp<double>::Cache mc;
  check_param_grads(
      params, [&] { return (mlp.forward(x).array() * w.array()).sum(); },
      [&] {
        mlp.forward_train(x, mc, dummy);
        mlp.backward(w, mc);
      });

  nn::MultiheadSelfAttention<double> attn;
  attn.init(8, 2, 0.0, rng);
  nn::ParamList<double> aparams;
  attn.params("attn", aparams);
  typename nn::MultiheadSelfAttention<double>::Cache ac;
  check_param_grads(
      aparams, [&] { return (attn.forward(x).array() * w.array()).sum(); },
      [&] {
        attn.forward_train(x, ac, dummy);
        attn.backward(w, ac);
      });
}

TEST_CASE("full vit gradient check over params and input") {
  BackboneSpec spec;
  spec.token_patch_size = 4;
  spec.embed_dim = 16;
  spec.depth = 2;
  spec.heads = 2;
  VisionTransformer<double> vit(spec, 8, 8, 99);
  Rng rng(7);
  Rng dummy(0);
  Tensor3<double> img(3, 8, 8);
  for (auto& v : img.data) v = rng.normal() * 0.5;
  const MatX<double> w = random_mat(5, 16, rng); // 4 tokens + CLS

  nn::ParamList<double> params;
  vit.params(params);
  typename VisionTransformer<double>::Cache cache;
  Tensor3<double> dimg;
  auto loss = [&] { return (vit.forward_tokens(img).array() * w.array()).sum(); };
  auto analytic = [&] {
    vit.forward_tokens_train(img, cache, dummy);
    dimg = vit.backward_tokens(w, cache);
  };
  check_param_grads(params, loss, analytic, 1e-5, 1e-2, 4);

  // Input gradient: the spec's 10 random probes at eps 1e-3.
  Rng probe(8);
  for (int k = 0; k < 10; ++k) {
    const size_t i = probe.below(img.data.size());
    const double eps = 1e-3;
    const double orig = img.data[i];
    img.data[i] = orig + eps;
    const double up = loss();
    img.data[i] = orig - eps;
    const double down = loss();
    img.data[i] = orig;
    const double fd = (up - down) / (2 * eps);
    const double an = dimg.data[i];
    CHECK(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-4}) < 1e-2);
  }
}

TEST_CASE("train forward with zero drop rates equals eval forward") {
  BackboneSpec spec;
  spec.token_patch_size = 4;
  spec.embed_dim = 16;
  spec.depth = 2;
  spec.heads = 2;
  VisionTransformer<double> vit(spec, 8, 12, 3);
  Rng rng(9), dummy(0);
  Tensor3<double> img(3, 8, 12);
  for (auto& v : img.data) v = rng.normal();
  typename VisionTransformer<double>::Cache cache;
  const MatX<double> train_out = vit.forward_tokens_train(img, cache, dummy);
  const MatX<double> eval_out = vit.forward_tokens(img);
  CHECK((train_out - eval_out).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("encode output conventions") {
  BackboneSpec spec;
  spec.token_patch_size = 14;
  spec.embed_dim = 32;
  spec.depth = 1;
  spec.heads = 2;
  VisionTransformer<float> vit(spec, 224, 224, 11);
  CHECK(vit.grid_rows() == 16);
  CHECK(vit.grid_cols() == 16);

  ImageU8 img(224, 224, 3, 120);
  const auto t = normalize_image<float>(img, Normalizer{});
  const VecX<float> patch_vec = vit.encode(t, EncodeMode::patch_features);
  CHECK(patch_vec.size() == 64); // 2 x embed
  const VecX<float> thumb_vec = vit.encode(t, EncodeMode::thumbnail);
  CHECK(thumb_vec.size() == 32);

  // Determinism in eval state.
  const VecX<float> again = vit.encode(t, EncodeMode::patch_features);
  CHECK((again - patch_vec).cwiseAbs().maxCoeff() == 0.0f);

  // Zero weights -> zero features.
  nn::ParamList<float> params;
  vit.params(params);
  for (auto& p : params) p.value->setZero();
  const VecX<float> zero_vec = vit.encode(t, EncodeMode::patch_features);
  CHECK(zero_vec.cwiseAbs().maxCoeff() == 0.0f);

  // Non-divisible input names the required multiple.
  ImageU8 bad(225, 224, 3, 0);
  const auto tb = normalize_image<float>(bad, Normalizer{});
  try {
    vit.encode(tb, EncodeMode::thumbnail);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("multiple of 14") != std::string::npos);
  }
}

TEST_CASE("token grid bookkeeping over random valid shapes") {
  Rng rng(12);
  for (int trial = 0; trial < 8; ++trial) {
    BackboneSpec spec;
    spec.token_patch_size = 2 + static_cast<int>(rng.below(4)); // 2..5
    spec.embed_dim = 8;
    spec.depth = 1;
    spec.heads = 2;
    const int gr = 1 + static_cast<int>(rng.below(5));
    const int gc = 1 + static_cast<int>(rng.below(5));
    VisionTransformer<float> vit(spec, gr * spec.token_patch_size,
                                 gc * spec.token_patch_size, trial);
    CHECK(vit.grid_rows() * vit.grid_cols() == vit.token_count());
    Tensor3<float> img(3, gr * spec.token_patch_size, gc * spec.token_patch_size);
    const auto tokens = vit.forward_tokens(img);
    CHECK(tokens.rows() == vit.token_count() + 1);
  }
}

TEST_CASE("adapt_positions identity, arithmetic, and constancy") {
  Rng rng(13);
  MatX<float> pos = random_mat(1 + 16 * 16, 24, rng).cast<float>();

  const MatX<float> same = adapt_positions<float>(pos, 16, 16, 16, 16);
  CHECK(same.data() != nullptr);
  CHECK((same - pos).cwiseAbs().maxCoeff() == 0.0f); // bit-for-bit

  const MatX<float> big = adapt_positions<float>(pos, 16, 16, 64, 128);
  CHECK(big.rows() == 1 + 8192); // 64*128 token rows + CLS
  CHECK(big.row(0) == pos.row(0));

  MatX<float> constant = MatX<float>::Constant(1 + 2 * 2, 6, 3.25f);
  const MatX<float> grown = adapt_positions<float>(constant, 2, 2, 7, 9);
  CHECK((grown.array() - 3.25f).abs().maxCoeff() < 1e-6f);

  CHECK_THROWS_AS(adapt_positions<float>(pos, 15, 16, 4, 4), ShapeError);
  CHECK_THROWS_AS(adapt_positions<float>(pos, 16, 16, 0, 4), ArgumentError);
}

TEST_CASE("encode agrees before/after identity adaptation") {
  BackboneSpec spec;
  spec.token_patch_size = 8;
  spec.embed_dim = 16;
  spec.depth = 2;
  spec.heads = 2;
  VisionTransformer<float> vit(spec, 32, 48, 21);
  Rng rng(22);
  ImageU8 img(48, 32, 3);
  for (auto& b : img.data) b = static_cast<uint8_t>(rng.below(256));
  const auto t = normalize_image<float>(img, Normalizer{});
  const VecX<float> before = vit.encode(t, EncodeMode::patch_features);
  vit.adapt_input(32, 48); // identity re-target
  const VecX<float> after = vit.encode(t, EncodeMode::patch_features);
  CHECK((before - after).cwiseAbs().maxCoeff() < 1e-6f);
}

TEST_CASE("smoothed cross entropy spec examples") {
  // s=0, huge margin on the right class -> loss ~ 0
  VecX<double> margin(3);
  margin << 30.0, 0.0, 0.0;
  CHECK(nn::smoothed_ce<double>(margin, 0, 0.0) < 1e-9);

  // uniform logits: loss = log C for any smoothing
  VecX<double> uniform = VecX<double>::Zero(16);
  CHECK(nn::smoothed_ce<double>(uniform, 3, 0.0) == doctest::Approx(std::log(16.0)).epsilon(1e-12));
  CHECK(nn::smoothed_ce<double>(uniform, 3, 0.05) ==
        doctest::Approx(std::log(16.0)).epsilon(1e-12));
  CHECK(nn::smoothed_ce<double>(uniform, 3, 0.5) ==
        doctest::Approx(std::log(16.0)).epsilon(1e-12));

  // s=0.05, C=2, logits [1,0], label 0: closed-form arithmetic oracle.
  VecX<double> logits(2);
  logits << 1.0, 0.0;
  const double p0 = std::exp(1.0) / (std::exp(1.0) + 1.0);
  const double q0 = 0.95 + 0.05 / 2;
  const double q1 = 0.05 / 2;
  const double expect = -(q0 * std::log(p0) + q1 * std::log(1.0 - p0));
  CHECK(nn::smoothed_ce<double>(logits, 0, 0.05) == doctest::Approx(expect).epsilon(1e-9));

  CHECK_THROWS_AS(nn::smoothed_ce<double>(logits, 5, 0.05), LabelError);
  CHECK_THROWS_AS(nn::smoothed_ce<double>(logits, 0, 1.0), ArgumentError);
}

TEST_CASE("smoothed ce gradient matches finite differences") {
  Rng rng(31);
  VecX<double> logits(7);
  for (int i = 0; i < 7; ++i) logits[i] = rng.normal();
  VecX<double> grad;
  nn::smoothed_ce<double>(logits, 2, 0.05, &grad);
  for (int i = 0; i < 7; ++i) {
    const double eps = 1e-6;
    VecX<double> up = logits, down = logits;
    up[i] += eps;
    down[i] -= eps;
    const double fd =
        (nn::smoothed_ce<double>(up, 2, 0.05) - nn::smoothed_ce<double>(down, 2, 0.05)) /
        (2 * eps);
    CHECK(fd == doctest::Approx(grad[i]).epsilon(1e-5));
  }
}

TEST_CASE("cosine warmup schedule shape") {
  nn::CosineWarmup sched(1e-3, 50, 1000);
  CHECK(sched.lr_at(0) < sched.lr_at(49));
  CHECK(sched.lr_at(49) == doctest::Approx(1e-3).epsilon(1e-9));
  // linear rise
  CHECK(sched.lr_at(24) == doctest::Approx(1e-3 * 25 / 50).epsilon(1e-9));
  // monotone decay after warmup
  double prev = sched.lr_at(50);
  for (int64_t s = 51; s < 1000; s += 50) {
    CHECK(sched.lr_at(s) < prev);
    prev = sched.lr_at(s);
  }
  CHECK(sched.lr_at(999) <= 0.01 * 1e-3);
  CHECK(sched.lr_at(1000) == 0.0);
  CHECK_THROWS_AS(nn::CosineWarmup(1e-3, 5, 0), ArgumentError);
}

TEST_CASE("adamw minimizes a quadratic and applies decoupled decay") {
  MatX<double> x = MatX<double>::Constant(1, 3, 5.0);
  MatX<double> g = MatX<double>::Zero(1, 3);
  nn::ParamList<double> params{{"x", &x, &g}};
  nn::AdamW<double> opt(params, 0.1, 0.0);
  const Eigen::RowVector3d target(1.0, -2.0, 0.5);
  for (int i = 0; i < 500; ++i) {
    g = x.row(0) - target;
    opt.step();
  }
  CHECK((x.row(0) - target).cwiseAbs().maxCoeff() < 1e-3);

  // Pure decay: zero gradients shrink weights geometrically.
  MatX<double> y = MatX<double>::Constant(1, 1, 2.0);
  MatX<double> gy = MatX<double>::Zero(1, 1);
  nn::ParamList<double> p2{{"y", &y, &gy}};
  nn::AdamW<double> opt2(p2, 0.1, 0.5);
  opt2.step();
  CHECK(y(0, 0) == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0).epsilon(1e-9));
}

TEST_CASE("dropout and droppath train-time behavior") {
  Rng rng(41);
  nn::Dropout<double> drop;
  drop.rate = 0.5;
  const MatX<double> x = MatX<double>::Constant(50, 40, 1.0);
  typename nn::Dropout<double>::Cache c;
  const MatX<double> y = drop.forward_train(x, c, rng);
  int zeros = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y.data()[i] == 0.0)
      zeros++;
    else
      CHECK(y.data()[i] == doctest::Approx(2.0));
  }
  CHECK(zeros > 800);
  CHECK(zeros < 1200);

  nn::DropPath<double> dp;
  dp.rate = 0.3;
  int kept = 0;
  for (int i = 0; i < 200; ++i) {
    typename nn::DropPath<double>::Cache dc;
    const MatX<double> out = dp.forward_train(x, dc, rng);
    if (out(0, 0) != 0.0) {
      kept++;
      CHECK(out(0, 0) == doctest::Approx(1.0 / 0.7));
    }
  }
  CHECK(kept > 110);
  CHECK(kept < 170);
}

TEST_CASE("checkpoint round trip preserves bytes and rejects drift") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "stainqc_test_nn";
  fs::create_directories(dir);

  BackboneSpec spec;
  spec.token_patch_size = 4;
  spec.embed_dim = 16;
  spec.depth = 1;
  spec.heads = 2;
  VisionTransformer<float> vit(spec, 8, 8, 5);
  nn::ParamList<float> params;
  vit.params(params);

  Checkpoint ck;
  ck.meta = {{"training_stage", "patch_finetuned"}, {"class_set", "fine"}};
  store_params(ck, params);
  const fs::path p = dir / "model.sqck";
  save_checkpoint(p, ck);

  const Checkpoint back = load_checkpoint(p);
  CHECK(back.meta.at("training_stage") == "patch_finetuned");
  CHECK(back.tensors.size() == ck.tensors.size());
  for (const auto& [name, mat] : ck.tensors) {
    REQUIRE(back.tensors.count(name) == 1);
    CHECK(back.tensors.at(name) == mat);
  }

  // Identical save -> identical bytes.
  const fs::path p2 = dir / "model2.sqck";
  save_checkpoint(p2, ck);
  std::ifstream a(p, std::ios::binary), b(p2, std::ios::binary);
  const std::string bytes_a((std::istreambuf_iterator<char>(a)), {});
  const std::string bytes_b((std::istreambuf_iterator<char>(b)), {});
  CHECK(bytes_a == bytes_b);

  VisionTransformer<float> vit2(spec, 8, 8, 123); // different init
  nn::ParamList<float> params2;
  vit2.params(params2);
  load_params(back, params2);
  ImageU8 img(8, 8, 3, 33);
  const auto t = normalize_image<float>(img, Normalizer{});
  CHECK((vit.encode(t, EncodeMode::thumbnail) - vit2.encode(t, EncodeMode::thumbnail))
            .cwiseAbs()
            .maxCoeff() == 0.0f);

  Checkpoint missing = back;
  missing.tensors.erase("backbone.cls");
  CHECK_THROWS_AS(load_params(missing, params2), StageError);
  Checkpoint wrong = back;
  wrong.tensors["backbone.cls"] = nn::MatX<float>::Zero(2, 16);
  CHECK_THROWS_AS(load_params(wrong, params2), ShapeError);

  CHECK_THROWS_AS(load_checkpoint(dir / "nope.sqck"), IoError);
}
