#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <stdexcept>

#include "anyres/checkpoint.hpp"
#include "anyres/discriminator.hpp"
#include "anyres/errors.hpp"
#include "anyres/generator.hpp"
#include "anyres/resample.hpp"
#include "anyres/train.hpp"

using namespace anyres;
namespace fs = std::filesystem;

namespace {

GeneratorConfig small_gen(SynthesisKernel kernel = SynthesisKernel::pointwise, int p = 16) {
  GeneratorConfig c;
  c.p = p;
  c.z_dim = 8;
  c.fourier_channels = 12;
  c.fourier_bandwidth = 4.0;
  c.layers = 3;
  c.channels = 10;
  c.mapping_layers = 2;
  c.mapping_width = 8;
  c.kernel = kernel;
  c.s_max = 8 * p;
  c.seed = 42;
  return c;
}

DiscriminatorConfig small_disc(int p = 8) {
  DiscriminatorConfig c;
  c.p = p;
  c.base_channels = 4;
  c.max_channels = 8;
  c.seed = 5;
  return c;
}

LatentCode latent(int dim, std::uint64_t seed) {
  Rng rng(seed);
  return sample_latent(dim, rng);
}

Image random_image(int p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(p, p);
  for (double& v : img.pixels) v = u(rng);
  return img;
}

void randomize(nn::Param& p, std::uint64_t seed, double std) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, std);
  for (double& v : p.data) v = n(rng);
}

bool close(double a, double b, double rel, double abs_floor) {
  return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b)) + abs_floor;
}

}  // namespace

TEST_CASE("latent mapping") {
  const Generator g(small_gen());
  const auto z1 = latent(8, 1), z2 = latent(8, 2);
  CHECK(g.map_latent(z1) == g.map_latent(z1));
  CHECK(g.map_latent(z1) != g.map_latent(z2));
  // Unit-norm convention: scaling z does not change the mapping.
  LatentCode z3 = z1;
  for (double& v : z3) v *= 3.0;
  const auto a = g.map_latent(z1), b = g.map_latent(z3);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-12);
  CHECK_THROWS_AS(g.map_latent(LatentCode(7, 1.0)), std::invalid_argument);
  CHECK_THROWS_AS(g.map_latent(LatentCode(8, 0.0)), std::invalid_argument);

  Generator zeroed(small_gen());
  for (auto& p : zeroed.params().all()) {
    if (p.name.rfind("map_z.", 0) == 0 && p.name.find(".weight") != std::string::npos) std::fill(p.data.begin(), p.data.end(), 0.0);
  }
  // With zero weights the output is the (activated) bias chain.
  auto& last_bias = zeroed.params()[zeroed.params().find("map_z.1.bias")];
  randomize(last_bias, 3, 1.0);
  const auto out = zeroed.map_latent(z1);
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == nn::leaky(last_bias.data[i]));
}

TEST_CASE("modulation with zero weight matrices is all ones") {
  Generator g(small_gen());
  g.enable_scale_branch();
  for (auto& p : g.params().all()) {
    if (p.name.find(".wz") != std::string::npos) std::fill(p.data.begin(), p.data.end(), 0.0);
  }
  const auto mod = g.modulation(latent(8, 4), 0.3);
  REQUIRE(static_cast<int>(mod.layers.size()) == g.modulated_layers());
  for (const auto& layer : mod.layers)
    for (double v : layer) CHECK(v == 1.0);
}

TEST_CASE("enabling the scale branch leaves outputs bit-identical") {
  for (auto kernel : {SynthesisKernel::pointwise, SynthesisKernel::conv3x3}) {
    Generator g(small_gen(kernel));
    // Pretend phase 1 moved the scale weights; switching on must reset them.
    for (auto& p : g.params().all()) {
      if (p.name.find(".ws") != std::string::npos || p.name.find(".bs") != std::string::npos) randomize(p, 9, 0.1);
    }
    const Generator before = g;
    g.enable_scale_branch();
    CHECK(g.scale_branch());
    const auto z = latent(8, 5);
    const auto m0 = before.modulation(z, -1.0);
    const auto m1 = g.modulation(z, -1.0);
    CHECK(m0.layers == m1.layers);
    CHECK(g.synthesize_patch(z, PatchSpec::global(16)) == before.synthesize_patch(z, PatchSpec::global(16)));
    CHECK(g.synthesize_patch(z, {48, {0.4, 0.6}, 16}) == before.synthesize_patch(z, {48, {0.4, 0.6}, 16}));
  }
}

TEST_CASE("trained scale weights make modulation depend on s") {
  Generator g(small_gen());
  g.enable_scale_branch();
  randomize(g.params()[g.params().find("mod.1.ws")], 11, 0.5);
  const auto z = latent(8, 6);
  CHECK(g.modulation(z, g.scale_input(16)).layers[1] != g.modulation(z, g.scale_input(64)).layers[1]);
  CHECK(g.modulation(z, g.scale_input(16)).layers[0] == g.modulation(z, g.scale_input(64)).layers[0]);
}

TEST_CASE("patch synthesis basics") {
  const Generator g(small_gen());
  const auto z = latent(8, 7);
  const Image a = g.synthesize_patch(z, PatchSpec::global(16));
  CHECK(a.height == 16);
  CHECK(a.width == 16);
  CHECK(g.synthesize_patch(z, PatchSpec::global(16)) == a);
  CHECK(g.synthesize_image(z, 16) == a);
  CHECK_THROWS_AS(g.synthesize_patch(z, {32, {0.1, 0.5}, 16}), std::invalid_argument);
  CHECK_THROWS_AS(g.synthesize_patch(z, {8, {0.5, 0.5}, 8}), std::invalid_argument);
}

TEST_CASE("pixel-aligned shifts give shifted copies") {
  for (auto kernel : {SynthesisKernel::pointwise, SynthesisKernel::conv3x3}) {
    Generator g(small_gen(kernel));
    g.enable_scale_branch();
    randomize(g.params()[g.params().find("mod.2.ws")], 12, 0.3);
    const auto z = latent(8, 8);
    const int s = 64, p = 16;
    const PatchSpec a{s, {0.4, 0.45}, p};
    const int dx = 5, dy = 3;
    const PatchSpec b{s, {a.v.x + static_cast<double>(dx) / s, a.v.y + static_cast<double>(dy) / s}, p};
    const Image ia = g.synthesize_patch(z, a), ib = g.synthesize_patch(z, b);
    double err = 0.0;
    for (int y = 0; y + dy < p; ++y)
      for (int x = 0; x + dx < p; ++x)
        for (int c = 0; c < 3; ++c) err = std::max(err, std::abs(ia.at(y + dy, x + dx, c) - ib.at(y, x, c)));
    CHECK(err <= 1e-5);
  }
}

TEST_CASE("modulation is Lipschitz in the scale input") {
  Generator g(small_gen());
  g.enable_scale_branch();
  for (auto& p : g.params().all()) {
    if (p.name.find(".ws") != std::string::npos) randomize(p, 13, 0.2);
  }
  const auto z = latent(8, 9);
  auto dist = [&](double a, double b) {
    const auto ma = g.modulation(z, a), mb = g.modulation(z, b);
    double d = 0.0;
    for (std::size_t k = 0; k < ma.layers.size(); ++k)
      for (std::size_t i = 0; i < ma.layers[k].size(); ++i) d = std::max(d, std::abs(ma.layers[k][i] - mb.layers[k][i]));
    return d;
  };
  double lip = 0.0;
  for (int s = 16; s < 128; ++s) {
    const double a = g.scale_input(s), b = g.scale_input(s + 1);
    const double d = dist(a, b);
    lip = std::max(lip, d / (b - a));
    // Halving the step at least roughly halves the change.
    CHECK(dist(a, 0.5 * (a + b)) <= 0.6 * d + 1e-12);
  }
  CHECK(lip > 0.0);
  CHECK(lip < 10.0);
}

TEST_CASE("tiled synthesis matches the monolithic pass") {
  for (auto kernel : {SynthesisKernel::pointwise, SynthesisKernel::conv3x3}) {
    const Generator g(small_gen(kernel));
    const auto z = latent(8, 10);
    for (int res : {32, 48, 16 * 2 + 17}) {
      const Image tiled = g.synthesize_image(z, res);
      const Image mono = g.synthesize_monolithic(z, res);
      CHECK(tiled.height == res);
      CHECK(tiled.width == res);
      CHECK(max_abs_diff(tiled, mono) <= 1e-5);
    }
    CHECK_THROWS_AS(g.synthesize_image(z, 15), std::invalid_argument);
  }
}

TEST_CASE("render at 2p equals its four quadrant patches") {
  const Generator g(small_gen());
  const auto z = latent(8, 14);
  const Image full = g.synthesize_image(z, 32);
  const double q[2] = {0.25, 0.75};
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 2; ++c) {
      const Image tile = g.synthesize_patch(z, {32, {q[c], q[r]}, 16});
      CHECK(max_abs_diff(tile, square_crop(full, 16 * r, 16 * c, 16)) <= 1e-5);
    }
  }
}

TEST_CASE("generator gradients match finite differences") {
  for (auto kernel : {SynthesisKernel::pointwise, SynthesisKernel::conv3x3}) {
    Generator g(small_gen(kernel, 8));
    g.enable_scale_branch();
    for (auto& p : g.params().all()) {
      if (p.name.find(".ws") != std::string::npos || p.name.find(".bs") != std::string::npos) randomize(p, 15, 0.2);
    }
    const auto z = latent(8, 16);
    const PatchSpec spec{24, {0.4, 0.55}, 8};
    const Image r = random_image(8, 17);
    auto loss = [&](const Generator& gen) {
      const Image out = gen.synthesize_patch(z, spec);
      double l = 0.0;
      for (std::size_t i = 0; i < out.pixels.size(); ++i) l += (r.pixels[i] - 0.5) * out.pixels[i];
      return l;
    };
    Generator::Trace trace;
    g.forward(z, spec, trace);
    Image grad_out = r;
    for (double& v : grad_out.pixels) v -= 0.5;
    nn::ParamSet grads = g.params().zeros_like();
    g.backward(trace, grad_out, grads);

    std::mt19937_64 rng(18);
    int checked = 0, bad = 0;
    for (int t = 0; t < g.params().size(); ++t) {
      auto& param = g.params()[t];
      for (int k = 0; k < 3; ++k) {
        const std::size_t j = std::uniform_int_distribution<std::size_t>(0, param.data.size() - 1)(rng);
        const double orig = param.data[j];
        const double h = 1e-6;
        param.data[j] = orig + h;
        const double lp = loss(g);
        param.data[j] = orig - h;
        const double lm = loss(g);
        param.data[j] = orig;
        const double fd = (lp - lm) / (2 * h);
        const double an = grads[t].data[j];
        ++checked;
        if (!close(fd, an, 1e-3, 1e-7)) {
          ++bad;
          MESSAGE(param.name << "[" << j << "] fd=" << fd << " analytic=" << an);
        }
      }
    }
    CHECK(checked > 30);
    CHECK(bad == 0);
  }
}

TEST_CASE("discriminator basics") {
  const Discriminator d(small_disc(16));
  const Image img = random_image(16, 1);
  CHECK(d.logit(img) == d.logit(img));
  CHECK(d.logit(img) != d.logit(random_image(16, 2)));
  CHECK_THROWS_AS(d.logit(random_image(8, 1)), std::invalid_argument);
}

TEST_CASE("discriminator gradients match finite differences") {
  Discriminator d(small_disc(8));
  const Image img = random_image(8, 3);
  Image gx;
  nn::ParamSet gp = d.params().zeros_like();
  d.forward_backward(img, 1.0, &gp, &gx);
  int bad = 0;
  for (std::size_t i = 0; i < img.pixels.size(); i += 7) {
    Image a = img, b = img;
    a.pixels[i] += 1e-6;
    b.pixels[i] -= 1e-6;
    const double fd = (d.logit(a) - d.logit(b)) / 2e-6;
    if (!close(fd, gx.pixels[i], 1e-3, 1e-8)) ++bad;
  }
  for (int t = 0; t < d.params().size(); ++t) {
    auto& p = d.params()[t];
    for (std::size_t j = 0; j < p.data.size(); j += std::max<std::size_t>(1, p.data.size() / 5)) {
      const double orig = p.data[j];
      p.data[j] = orig + 1e-6;
      const double lp = d.logit(img);
      p.data[j] = orig - 1e-6;
      const double lm = d.logit(img);
      p.data[j] = orig;
      if (!close((lp - lm) / 2e-6, gp[t].data[j], 1e-3, 1e-8)) ++bad;
    }
  }
  CHECK(bad == 0);
}

TEST_CASE("R1 parameter gradient matches finite differences") {
  Discriminator d(small_disc(8));
  const Image img = random_image(8, 4);
  nn::ParamSet grads = d.params().zeros_like();
  const auto r1 = d.r1(img, 1.0, &grads);
  CHECK(r1.penalty > 0.0);
  std::mt19937_64 rng(5);
  int bad = 0, checked = 0;
  for (int t = 0; t < d.params().size(); ++t) {
    auto& p = d.params()[t];
    for (int k = 0; k < 4; ++k) {
      const std::size_t j = std::uniform_int_distribution<std::size_t>(0, p.data.size() - 1)(rng);
      const double orig = p.data[j];
      const double h = 1e-5;
      p.data[j] = orig + h;
      const double lp = d.r1(img, 0.0, nullptr).penalty;
      p.data[j] = orig - h;
      const double lm = d.r1(img, 0.0, nullptr).penalty;
      p.data[j] = orig;
      const double fd = (lp - lm) / (2 * h);
      ++checked;
      if (!close(fd, grads[t].data[j], 1e-3, 1e-9)) {
        ++bad;
        MESSAGE(p.name << "[" << j << "] fd=" << fd << " analytic=" << grads[t].data[j]);
      }
    }
  }
  CHECK(checked >= 20);
  CHECK(bad == 0);
}

TEST_CASE("R1 of a linear discriminator does not depend on the input") {
  DiscriminatorConfig c = small_disc(8);
  c.slope = 1.0;
  const Discriminator d(c);
  std::vector<double> values;
  for (int i = 0; i < 8; ++i) values.push_back(d.r1(random_image(8, 100 + i), 0.0, nullptr).penalty);
  double mean = 0.0;
  for (double v : values) mean += v / values.size();
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean) / values.size();
  CHECK(mean > 0.0);
  CHECK(var <= 1e-10);
}

TEST_CASE("R1 of a constant discriminator is zero") {
  Discriminator d(small_disc(8));
  for (auto& p : d.params().all()) {
    if (p.name == "head.weight") std::fill(p.data.begin(), p.data.end(), 0.0);
  }
  CHECK(d.r1(random_image(8, 6), 0.0, nullptr).penalty == 0.0);
}

TEST_CASE("Adam first step moves by lr against the gradient sign") {
  nn::ParamSet ps;
  ps.add("w", {3}, 1.0);
  nn::ParamSet g = ps.zeros_like();
  g[0].data = {0.5, -2.0, 0.0};
  nn::Adam opt(ps, 0.1, 0.0, 0.99);
  opt.step(ps, g);
  CHECK(ps[0].data[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(ps[0].data[1] == doctest::Approx(1.1).epsilon(1e-6));
  CHECK(ps[0].data[2] == 1.0);
  CHECK(opt.t == 1);
}

namespace {

std::vector<std::uint8_t> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.p = 16;
  c.z_dim = 8;
  c.fourier_channels = 12;
  c.g_layers = 2;
  c.g_channels = 8;
  c.mapping_width = 8;
  c.d_base_channels = 4;
  c.d_max_channels = 8;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("checkpoint round trip") {
  const fs::path dir = fs::temp_directory_path() / "anyres_test_ckpt";
  fs::remove_all(dir);
  const TrainConfig cfg = tiny_config();
  TrainState p1 = init_phase1(cfg, 64);
  p1.step = 17;
  const TrainState st = init_phase2(p1, cfg);
  save_checkpoint(to_checkpoint(st, cfg), dir / "a.ckpt");
  const TrainState back = state_from_checkpoint(load_checkpoint(dir / "a.ckpt"));
  save_checkpoint(to_checkpoint(back, cfg), dir / "b.ckpt");
  CHECK(file_bytes(dir / "a.ckpt") == file_bytes(dir / "b.ckpt"));

  CHECK(back.phase == 2);
  CHECK(back.g.params() == st.g.params());
  CHECK(back.d.params() == st.d.params());
  CHECK(back.teacher->params() == st.teacher->params());
  CHECK(back.g.scale_branch());
  const auto z = latent(8, 1);
  for (const PatchSpec& spec : {PatchSpec::global(16), PatchSpec{40, {0.3, 0.6}, 16}}) {
    CHECK(back.g.synthesize_patch(z, spec) == st.g.synthesize_patch(z, spec));
  }
  const Image probe = random_image(16, 2);
  CHECK(back.d.logit(probe) == st.d.logit(probe));

  const auto ck = load_checkpoint(dir / "a.ckpt");
  CHECK(ck.config_hash == config_hash(cfg));
  CHECK(ck.meta.find("\"phase\":2") != std::string::npos);
  CHECK(ck.meta.find("\"seed\":3") != std::string::npos);
}

TEST_CASE("damaged checkpoints fail cleanly") {
  const fs::path dir = fs::temp_directory_path() / "anyres_test_ckpt_bad";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const TrainConfig cfg = tiny_config();
  const auto bytes = serialize(to_checkpoint(init_phase1(cfg, 64), cfg));

  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{13}, bytes.size() / 3, bytes.size() - 1}) {
    std::vector<std::uint8_t> t(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    CHECK_THROWS_AS(deserialize(t), FormatError);
  }
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  CHECK_THROWS_AS(deserialize(flipped), FormatError);

  auto versioned = bytes;
  const std::uint32_t v = 99;
  std::memcpy(versioned.data() + 8, &v, sizeof(v));
  try {
    deserialize(versioned);
    FAIL("version mismatch accepted");
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("99") != std::string::npos);
    CHECK(msg.find(std::to_string(kCheckpointVersion)) != std::string::npos);
  }

  std::ofstream(dir / "trunc.ckpt", std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), 100);
  CHECK_THROWS_AS(load_checkpoint(dir / "trunc.ckpt"), FormatError);
}
