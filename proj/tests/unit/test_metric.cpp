#include "support.hpp"

#include "glyphscribe/io.hpp"
#include "glyphscribe/metric.hpp"
#include "glyphscribe/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace glyphscribe;
using namespace glyphscribe::metric;

namespace {

EncoderConfig small_encoder(std::uint64_t seed = 7) {
  EncoderConfig c;
  c.backbone.input_size = 16;
  c.backbone.channels = {8, 16};
  c.embedding_dim = 32;
  c.seed = seed;
  return c;
}

std::vector<double> random_vec(std::mt19937_64 &rng, int d) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(d);
  for (auto &x : v)
    x = n(rng);
  return v;
}

std::vector<float> unit_vec(std::mt19937_64 &rng, int d) {
  auto v = random_vec(rng, d);
  double s = 0;
  for (double x : v)
    s += x * x;
  std::vector<float> out;
  for (double x : v)
    out.push_back(static_cast<float>(x / std::sqrt(s)));
  return out;
}

double cosine(const std::vector<double> &a, const std::vector<double> &b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

// Ink mass inside a horizontal band of rows, away from the side borders.
double band_mass(const Image &img, double y0, double y1) {
  double m = 0;
  for (int y = static_cast<int>(y0 * img.height); y < static_cast<int>(y1 * img.height); ++y)
    for (int x = static_cast<int>(0.15 * img.width); x < static_cast<int>(0.85 * img.width); ++x)
      m += (255 - img.at(x, y)) / 255.0;
  return m;
}

} // namespace

TEST_CASE("contrastive_loss hand-evaluated table") {
  struct Case {
    double s;
    int y;
    double m;
    double expected;
  };
  const std::vector<Case> cases = {
      {1.0, 0, 0.5, 0.0},    {0.4, 1, 0.5, 0.0},   {0.8, 1, 0.5, 0.09}, {0.0, 0, 0.5, 1.0},
      {0.0, 0, 0.2, 1.0},    {-1.0, 0, 0.5, 4.0},  {0.5, 0, 0.5, 0.25}, {0.9, 0, 0.3, 0.01},
      {1.0, 1, 0.5, 0.25},   {0.5, 1, 0.5, 0.0},   {-1.0, 1, 0.5, 0.0}, {0.7, 1, 0.2, 0.25},
      {0.6, 1, 0.0, 0.36},   {0.3, 1, 0.1, 0.04},  {-0.5, 0, 0.5, 2.25}, {0.25, 0, 0.9, 0.5625},
      {0.95, 1, 0.9, 0.0025}, {0.2, 1, 0.0, 0.04}, {0.1, 0, 0.0, 0.81}, {1.0, 1, 0.0, 1.0},
  };
  REQUIRE(cases.size() == 20);
  for (const auto &c : cases)
    CHECK_MESSAGE(std::abs(contrastive_loss(c.s, c.y, c.m) - c.expected) < 1e-9,
                  "s=" << c.s << " y=" << c.y << " m=" << c.m);
}

TEST_CASE("contrastive_loss nonnegative, zero exactly in the two regimes") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> us(-1.0, 1.0), um(0.0, 0.999);
  for (int t = 0; t < 5000; ++t) {
    const double s = t % 50 == 0 ? 1.0 : us(rng);
    const double m = um(rng);
    const int y = t % 2;
    const double l = contrastive_loss(s, y, m);
    CHECK(l >= 0);
    const bool zero_expected = (y == 0 && s == 1.0) || (y == 1 && s <= m);
    CHECK((l == 0) == zero_expected);
  }
}

TEST_CASE("cosine_contrastive gradient matches central differences") {
  std::mt19937_64 rng(42);
  for (int t = 0; t < 100; ++t) {
    const int d = 3 + t % 10;
    auto a = random_vec(rng, d), b = random_vec(rng, d);
    const int y = t % 2;
    const double m = 0.5;
    if (y == 1 && cosine(a, b) <= m) // keep the hinge active on negative pairs
      b = a, b[0] += 0.3;
    const auto g = cosine_contrastive(a, b, y, m);
    CHECK(g.similarity == doctest::Approx(cosine(a, b)).epsilon(1e-12));
    CHECK(g.loss == doctest::Approx(contrastive_loss(cosine(a, b), y, m)).epsilon(1e-12));
    const double h = 1e-6;
    for (int side = 0; side < 2; ++side)
      for (int i = 0; i < d; ++i) {
        auto &v = side == 0 ? a : b;
        const double orig = v[i];
        v[i] = orig + h;
        const double up = contrastive_loss(cosine(a, b), y, m);
        v[i] = orig - h;
        const double down = contrastive_loss(cosine(a, b), y, m);
        v[i] = orig;
        const double numeric = (up - down) / (2 * h);
        const double analytic = side == 0 ? g.grad_a[i] : g.grad_b[i];
        const double rel = std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
        CHECK_MESSAGE((rel < 1e-4 || std::abs(analytic - numeric) < 1e-9), "t=" << t << " i=" << i);
      }
  }
}

TEST_CASE("augment") {
  synth::GlyphFamily family(4, 3);
  const auto base = family.prototype(1, 40);

  AugmentConfig off;
  off.probability = 0;
  std::mt19937_64 rng(5);
  for (int i = 0; i < 20; ++i)
    CHECK(augment(base, off, rng) == base);

  SUBCASE("vertical mirror is rejected") {
    AugmentConfig bad;
    bad.mirror_axis = MirrorAxis::Vertical;
    CHECK_ERROR(bad.validate(), ErrorCode::InvalidArgument);
    CHECK_ERROR(augment(base, bad, rng), ErrorCode::InvalidArgument);
    MetricTrainConfig cfg;
    cfg.augment.mirror_axis = MirrorAxis::Vertical;
    CHECK_ERROR(cfg.validate(), ErrorCode::InvalidArgument);
    nlohmann::json j = MetricTrainConfig{};
    j["augment"]["mirror_axis"] = "vertical";
    CHECK_ERROR(j.get<MetricTrainConfig>().validate(), ErrorCode::InvalidArgument);
  }

  SUBCASE("identity fraction at probability 0.5") {
    AugmentConfig half;
    int identical = 0;
    for (int i = 0; i < 1000; ++i) {
      const auto out = augment(base, half, rng);
      CHECK(out.width == base.width);
      CHECK(out.height == base.height);
      identical += out == base;
    }
    CHECK(identical >= 450);
    CHECK(identical <= 550);
  }

  SUBCASE("never reflects about the horizontal axis") {
    // Thick bar in the upper part of the canvas. Legal transforms keep more
    // ink in the upper band than in the mirrored lower band; a top-bottom
    // flip would reverse that.
    Image probe(48, 48, 1, 255);
    for (int y = static_cast<int>(0.10 * 48); y < static_cast<int>(0.40 * 48); ++y)
      for (int x = static_cast<int>(0.10 * 48); x < static_cast<int>(0.90 * 48); ++x)
        probe.at(x, y) = 0;
    const auto flipped = flip_top_bottom(probe);
    CHECK(band_mass(flipped, 0.60, 0.90) > band_mass(flipped, 0.10, 0.40));
    AugmentConfig always;
    always.probability = 1.0;
    for (std::uint64_t seed = 0; seed < 2000; ++seed) {
      std::mt19937_64 r(seed);
      const auto out = augment(probe, always, r);
      CHECK_MESSAGE(band_mass(out, 0.10, 0.40) > band_mass(out, 0.60, 0.90), "seed " << seed);
    }
  }
}

TEST_CASE("sample_pairs") {
  std::vector<corpus::LabeledSample> samples;
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 1 + 3 * c; ++i) {
      corpus::LabeledSample s;
      s.code = "A" + std::to_string(c + 1);
      s.sample_id = s.code + "/" + std::to_string(i);
      samples.push_back(s);
    }
  std::mt19937_64 rng(9);
  const auto pairs = sample_pairs(samples, 10000, 0.5, rng);
  REQUIRE(pairs.size() == 10000);
  int positives = 0;
  for (const auto &p : pairs) {
    const bool same = samples[p.a].code == samples[p.b].code;
    CHECK((p.y == 0) == same);
    if (p.y == 0) {
      CHECK(p.a != p.b);
      CHECK(samples[p.a].code != "A1"); // the singleton class never anchors a positive
    }
    positives += p.y == 0;
  }
  CHECK(positives >= 4700);
  CHECK(positives <= 5300);

  std::mt19937_64 r1(3), r2(3);
  const auto x = sample_pairs(samples, 200, 0.5, r1), y = sample_pairs(samples, 200, 0.5, r2);
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK((x[i].a == y[i].a && x[i].b == y[i].b && x[i].y == y[i].y));

  std::vector<corpus::LabeledSample> one(samples.end() - 4, samples.end());
  const auto pos = sample_pairs(one, 100, 1.0, rng);
  CHECK(std::all_of(pos.begin(), pos.end(), [](const PairSample &p) { return p.y == 0; }));
  CHECK_ERROR(sample_pairs(one, 100, 0.5, rng), ErrorCode::InvalidArgument);
}

TEST_CASE("embed: unit norm, deterministic, sized") {
  EncoderModel enc(small_encoder());
  std::mt19937_64 rng(2);
  for (int t = 0; t < 30; ++t) {
    const auto img = testing::random_image(10 + t, 30 - t / 2, rng);
    const auto z = embed(enc, img);
    CHECK(z.size() == 32);
    double n = 0;
    for (float v : z)
      n += static_cast<double>(v) * v;
    CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-5);
    CHECK(embed(enc, img) == z);
  }
  CHECK(embed(enc, Image(16, 16, 1, 255)).size() == 32); // blank input still unit norm
  CHECK_ERROR(enc.embed_input(nn::Matrix::Zero(1, 10)), ErrorCode::InvalidArgument);
  CHECK(EncoderModel(EncoderConfig{}).dim() == 128);
}

TEST_CASE("centroids") {
  std::mt19937_64 rng(4);
  const auto u = unit_vec(rng, 8);
  auto neg = u;
  for (auto &v : neg)
    v = -v;
  const auto t = centroids_from_embeddings({u, u, neg, unit_vec(rng, 8)}, {"A1", "B1", "B1", "C1"});
  CHECK(t.entries.at("A1").support == 1);
  for (int i = 0; i < 8; ++i)
    CHECK(t.entries.at("A1").centroid[i] == doctest::Approx(u[i]));
  CHECK(t.entries.at("B1").degenerate);
  CHECK(!t.entries.at("A1").degenerate);
  CHECK_ERROR(centroids_from_embeddings({}, {}), ErrorCode::InvalidArgument);

  SUBCASE("mean matches direct summation") {
    for (int trial = 0; trial < 50; ++trial) {
      const int k = 1 + trial % 9;
      std::vector<std::vector<float>> e;
      for (int i = 0; i < k; ++i)
        e.push_back(unit_vec(rng, 16));
      const auto table = centroids_from_embeddings(e, std::vector<std::string>(k, "Z1"));
      const auto &c = table.entries.at("Z1");
      double norm = 0;
      for (int d = 0; d < 16; ++d) {
        double sum = 0;
        for (const auto &v : e)
          sum += v[d];
        CHECK(c.centroid[d] == doctest::Approx(sum / k).epsilon(1e-12));
        norm += c.centroid[d] * c.centroid[d];
      }
      CHECK(std::sqrt(norm) <= 1.0 + 1e-6); // float embeddings
      CHECK(c.support == static_cast<std::size_t>(k));
    }
  }
}

TEST_CASE("classify_nearest_centroid") {
  CentroidTable t;
  t.dim = 3;
  t.entries["A1"] = {{0.6, 0.8, 0.0}, 1, false};
  t.entries["B1"] = {{0.0, 1.0, 0.0}, 1, false};
  const auto p = classify_nearest_centroid({1.f, 0.f, 0.f}, t);
  CHECK(p.code == "A1");
  CHECK(p.similarity == doctest::Approx(0.6).epsilon(1e-7));
  CHECK(p.runner_up == "B1");
  CHECK(p.similarity >= p.runner_up_similarity);

  const auto exact = classify_nearest_centroid({0.f, 1.f, 0.f}, t);
  CHECK(exact.code == "B1");
  CHECK(exact.similarity == doctest::Approx(1.0));

  CentroidTable tie;
  tie.dim = 2;
  tie.entries["B2"] = {{0.3, 0.4}, 1, false};
  tie.entries["A2"] = {{0.6, 0.8}, 1, false};
  CHECK(classify_nearest_centroid({0.6f, 0.8f}, tie).code == "A2");

  SUBCASE("degenerate centroids are skipped; all degenerate is an error") {
    CentroidTable d = t;
    d.entries["A1"].degenerate = true;
    CHECK(classify_nearest_centroid({1.f, 0.f, 0.f}, d).code == "B1");
    d.entries["B1"].degenerate = true;
    CHECK_ERROR(classify_nearest_centroid({1.f, 0.f, 0.f}, d), ErrorCode::Degenerate);
    CHECK_ERROR(classify_nearest_centroid({1.f, 0.f, 0.f}, CentroidTable{}), ErrorCode::InvalidArgument);
    CHECK_ERROR(classify_nearest_centroid({1.f, 0.f}, t), ErrorCode::InvalidArgument);
  }

  SUBCASE("similarity floor") {
    const auto r = classify_nearest_centroid({1.f, 0.f, 0.f}, t, 0.7);
    CHECK(r.rejected);
    CHECK(r.code == kUnknownCode);
    CHECK(r.runner_up == "A1");
    CHECK(!classify_nearest_centroid({1.f, 0.f, 0.f}, t, 0.5).rejected);
  }
}

TEST_CASE("classify_nearest_centroid invariance under scaling and permutation") {
  std::mt19937_64 rng(1000);
  std::uniform_real_distribution<double> scale(0.05, 20.0);
  int violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int d = 4 + trial % 6, k = 2 + trial % 7;
    CentroidTable t;
    t.dim = d;
    for (int c = 0; c < k; ++c) {
      auto v = unit_vec(rng, d);
      t.entries["C" + std::to_string(c)] = {std::vector<double>(v.begin(), v.end()), 1, false};
    }
    const auto z = unit_vec(rng, d);
    const auto base = classify_nearest_centroid(z, t);

    CentroidTable scaled = t;
    for (auto &[code, e] : scaled.entries) {
      const double s = scale(rng);
      for (auto &x : e.centroid)
        x *= s;
    }
    violations += classify_nearest_centroid(z, scaled).code != base.code;

    // Same entries under permuted codes map back to the same winner.
    std::vector<std::string> codes;
    for (const auto &[code, e] : t.entries)
      codes.push_back(code);
    auto perm = codes;
    std::shuffle(perm.begin(), perm.end(), rng);
    CentroidTable renamed;
    renamed.dim = d;
    std::map<std::string, std::string> back;
    for (std::size_t i = 0; i < codes.size(); ++i) {
      renamed.entries["R" + perm[i]] = t.entries.at(codes[i]);
      back["R" + perm[i]] = codes[i];
    }
    violations += back.at(classify_nearest_centroid(z, renamed).code) != base.code;
  }
  CHECK(violations == 0);
}

TEST_CASE("register_class") {
  synth::GlyphFamily family(5, 11);
  EncoderModel enc(small_encoder());
  std::vector<corpus::LabeledSample> train = synth::make_samples(family, {0, 1, 2}, {5, 5, 5}, 32, 1);
  const auto table = compute_centroids(enc, train);
  CHECK(table.entries.size() == 3);
  CHECK(table.encoder_fingerprint == enc.fingerprint());

  std::mt19937_64 rng(1);
  const auto img = family.render(4, 32, rng);
  const auto grown = register_class(table, family.code(4), {img}, enc);
  CHECK(grown.entries.size() == table.entries.size() + 1);
  CHECK(grown.entries.at(family.code(4)).support == 1);
  CHECK(table.entries.size() == 3); // input untouched
  for (const auto &[code, e] : table.entries)
    CHECK(grown.entries.at(code).centroid == e.centroid);
  CHECK(enc.fingerprint() == table.encoder_fingerprint);

  const auto p = classify_nearest_centroid(embed(enc, img), grown);
  CHECK(p.code == family.code(4));
  CHECK(p.similarity == doctest::Approx(1.0).epsilon(1e-5));

  CHECK_ERROR(register_class(grown, family.code(4), {img}, enc), ErrorCode::Conflict);
  const auto img2 = family.render(4, 32, rng);
  const auto replaced = register_class(grown, family.code(4), {img, img2}, enc, true);
  CHECK(replaced.entries.at(family.code(4)).support == 2);
  CHECK_ERROR(register_class(table, "bad code", {img}, enc), ErrorCode::InvalidArgument);
  CHECK_ERROR(register_class(table, "Z9", {}, enc), ErrorCode::InvalidArgument);

  EncoderModel other(small_encoder(99));
  CHECK_ERROR(register_class(table, "Z9", {img}, other), ErrorCode::Conflict);
}

TEST_CASE("train_encoder on three synthetic classes") {
  synth::GlyphFamily family(3, 21);
  const auto train = synth::make_samples(family, {0, 1, 2}, {50, 50, 50}, 32, 5);
  const auto val = synth::make_samples(family, {0, 1, 2}, {10, 10, 10}, 32, 6, {}, "v");
  MetricTrainConfig cfg;
  cfg.pairs_per_epoch = 600;
  cfg.validation_pairs = 300;
  cfg.schedule.max_epochs = 4;
  cfg.schedule.seed = 3;
  auto enc_cfg = small_encoder();
  enc_cfg.backbone.input_size = 32;
  const auto result = train_encoder(EncoderModel(enc_cfg), train, val, cfg);
  const auto &h = result.history;
  REQUIRE(h.epochs.size() >= 2);
  CHECK(h.best_validation_loss < 0.5 * h.epochs.front().validation_loss);

  SUBCASE("repeat run gives the identical history and weights") {
    const auto again = train_encoder(EncoderModel(enc_cfg), train, val, cfg);
    CHECK(again.history == h);
    CHECK(again.encoder.fingerprint() == result.encoder.fingerprint());
  }
}

TEST_CASE("persistence") {
  testing::TempDir dir("metric");
  EncoderModel enc(small_encoder());
  synth::GlyphFamily family(3, 2);
  const auto samples = synth::make_samples(family, {0, 1, 2}, {2, 2, 2}, 32, 1);
  const auto table = compute_centroids(enc, samples);

  save_encoder(enc, dir / "enc.json");
  const auto loaded = load_encoder(dir / "enc.json");
  CHECK(loaded.fingerprint() == enc.fingerprint());
  CHECK(embed(loaded, samples[0].image) == embed(enc, samples[0].image));

  save_centroids(table, dir / "cen.json");
  const auto back = load_centroids(dir / "cen.json", loaded);
  REQUIRE(back.entries.size() == 3);
  for (const auto &[code, e] : table.entries) {
    CHECK(back.entries.at(code).support == e.support);
    for (std::size_t i = 0; i < e.centroid.size(); ++i)
      CHECK(back.entries.at(code).centroid[i] == doctest::Approx(e.centroid[i]).epsilon(1e-12));
  }
  CHECK_ERROR(load_centroids(dir / "cen.json", EncoderModel(small_encoder(5))), ErrorCode::Conflict);

  auto doc = io::read_json(dir / "enc.json");
  doc["format"] = "something.else";
  io::write_json(dir / "bad.json", doc);
  CHECK_ERROR(load_encoder(dir / "bad.json"), ErrorCode::Format);

  const auto csv = centroids_csv(table);
  CHECK(csv.rfind("code,support,c0,c1,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
}
