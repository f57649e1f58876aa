#include "pch.hpp"

#include <cstdio>
#include <filesystem>

using namespace wiretap;

namespace {

Image random_image(Rng& rng, int h, int w) {
  Image x(h, w);
  for (double& v : x.values()) v = rng.uniform();
  return x;
}

}  // namespace

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  for (int i = 0; i < 100; ++i) EXPECT_EQ(std::bit_cast<std::uint64_t>(a.normal()), std::bit_cast<std::uint64_t>(b.normal()));
}

TEST(Rng, ChildStreamsDiffer) {
  const Rng root(7);
  EXPECT_NE(root.child(1).seed(), root.child(2).seed());
  EXPECT_EQ(root.child(1).seed(), Rng(7).child(1).seed());
}

TEST(Rng, PinnedFirstDraw) {
  // mt19937_64 is fully specified by the standard: the 10000th draw from
  // the default seed is fixed.
  std::mt19937_64 ref;
  ref.discard(9999);
  EXPECT_EQ(ref(), 9981545732273789042ULL);
}

TEST(ComplexGaussian, EmpiricalVariance) {
  Rng rng(3);
  const CMatrix m = sample_complex_gaussian(rng, 100, 100, 1.0);
  const double var = m.squaredNorm() / static_cast<double>(m.size());
  EXPECT_GT(var, 0.94);
  EXPECT_LT(var, 1.06);
}

TEST(ComplexGaussian, ZeroVarianceRejected) {
  Rng rng(3);
  EXPECT_THROW(sample_complex_gaussian(rng, 2, 2, 0.0), InvalidArgument);
}

TEST(ComplexGaussian, Deterministic) {
  Rng a(11), b(11);
  EXPECT_EQ(sample_complex_gaussian(a, 3, 4, 2.0), sample_complex_gaussian(b, 3, 4, 2.0));
}

TEST(LeastSquares, Identity) {
  CVector b(2);
  b << 1.0, 2.0;
  const CVector x = solve_least_squares(CMatrix::Identity(2, 2), b);
  EXPECT_NEAR(std::abs(x(0) - 1.0), 0.0, 1e-14);
  EXPECT_NEAR(std::abs(x(1) - 2.0), 0.0, 1e-14);
}

TEST(LeastSquares, Diagonal) {
  CMatrix a = CMatrix::Zero(2, 2);
  a(0, 0) = 2.0;
  a(1, 1) = 4.0;
  CVector b(2);
  b << 2.0, 4.0;
  const CVector x = solve_least_squares(a, b);
  EXPECT_NEAR(std::abs(x(0) - 1.0), 0.0, 1e-14);
  EXPECT_NEAR(std::abs(x(1) - 1.0), 0.0, 1e-14);
}

TEST(LeastSquares, RecoversConstructedSolution) {
  Rng rng(5);
  const CMatrix a = sample_complex_gaussian(rng, 4, 2, 1.0);
  const CVector x0 = sample_complex_gaussian(rng, 2, 1, 1.0);
  EXPECT_LT((solve_least_squares(a, a * x0) - x0).norm(), 1e-10);
}

TEST(LeastSquares, RankDeficient) {
  CMatrix a(3, 2);
  a << 1.0, 2.0, 2.0, 4.0, 3.0, 6.0;
  EXPECT_THROW(solve_least_squares(a, CVector::Ones(3)), SingularMatrix);
}

TEST(FiniteDiff, Quadratic) {
  RVector x(2);
  x << 1.0, 2.0;
  const RVector g = finite_diff_gradient([](const RVector& v) { return v.squaredNorm(); }, x, 1e-5);
  EXPECT_NEAR(g(0), 2.0, 1e-6);
  EXPECT_NEAR(g(1), 4.0, 1e-6);
}

TEST(FiniteDiff, Constant) {
  const RVector g = finite_diff_gradient([](const RVector&) { return 3.0; }, RVector::Ones(5), 1e-5);
  EXPECT_EQ(g.norm(), 0.0);
}

TEST(StackReal, RoundTrip) {
  Rng rng(9);
  const CMatrix m = sample_complex_gaussian(rng, 3, 2, 1.0);
  EXPECT_EQ(unstack_real(stack_real(m), 3, 2), m);
}

TEST(TotalVariation, Constant) { EXPECT_EQ(total_variation(Image(4, 4, 0.3)), 0.0); }

TEST(TotalVariation, TwoByTwoSingleChannel) {
  // [[0,1],[0,1]] in channel 0: two horizontal jumps, no vertical ones.
  Image x(2, 2, 0.0);
  x.at(0, 0, 1) = 1.0;
  x.at(0, 1, 1) = 1.0;
  EXPECT_DOUBLE_EQ(total_variation(x), 2.0);
}

TEST(TotalVariation, MatchesDoubleLoop) {
  Rng rng(13);
  const Image x = random_image(rng, 8, 8);
  double ref = 0.0;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 8; ++y)
      for (int i = 0; i < 8; ++i) {
        if (i + 1 < 8) ref += std::abs(x.at(c, y, i + 1) - x.at(c, y, i));
        if (y + 1 < 8) ref += std::abs(x.at(c, y + 1, i) - x.at(c, y, i));
      }
  EXPECT_NEAR(total_variation(x), ref, 1e-12);
}

TEST(Psnr, IdenticalIsCapped) {
  Rng rng(1);
  const Image x = random_image(rng, 16, 16);
  EXPECT_EQ(psnr(x, x), kPsnrCapDb);
}

TEST(Psnr, UniformOffset) {
  const Image x(8, 8, 0.4), y(8, 8, 0.5);
  EXPECT_NEAR(psnr(x, y), 20.0, 1e-9);
}

TEST(Psnr, MatchesDirectMse) {
  Rng rng(2);
  const Image x = random_image(rng, 16, 16), y = random_image(rng, 16, 16);
  double mse = 0.0;
  for (std::size_t i = 0; i < x.values().size(); ++i) mse += std::pow(x.values()[i] - y.values()[i], 2);
  mse /= static_cast<double>(x.values().size());
  EXPECT_NEAR(psnr(x, y), 10.0 * std::log10(1.0 / mse), 1e-9);
}

TEST(MsSsim, IdenticalIsOne) {
  Rng rng(4);
  const Image x = synth_face(rng, 16, 16).image;
  EXPECT_NEAR(ms_ssim(x, x), 1.0, 1e-9);
}

TEST(MsSsim, DecreasesWithNoise) {
  Rng rng(4);
  const Image x = synth_face(rng, 32, 32).image;
  double prev = 1.0;
  for (double sigma : {0.01, 0.05, 0.1}) {
    Rng n(99);
    const double s = ms_ssim(x, add_gaussian_noise(x, n, sigma).clipped());
    EXPECT_LT(s, prev) << "sigma " << sigma;
    prev = s;
  }
}

TEST(MsSsim, TooSmallWithoutReduction) {
  MsSsimConfig cfg;
  cfg.auto_reduce = false;
  const Image x(16, 16, 0.5);
  EXPECT_THROW(ms_ssim(x, x, cfg), InvalidArgument);
}

TEST(Embedding, SelfAndNegation) {
  Rng rng(6);
  const ToyEmbedding emb;
  const Embedding e = emb.embed(synth_face(rng, 16, 16).image);
  EXPECT_NEAR(e.v.norm(), 1.0, 1e-12);
  EXPECT_NEAR(cosine_sim(e, e), 1.0, 1e-12);
  EXPECT_NEAR(cosine_sim(e, negate(e)), -1.0, 1e-12);
}

TEST(Embedding, DegenerateImage) {
  const ToyEmbedding emb;
  const Embedding z = emb.embed(Image(16, 16, 0.0));
  EXPECT_TRUE(z.degenerate);
  Rng rng(6);
  EXPECT_EQ(cosine_sim(z, emb.embed(random_image(rng, 16, 16))), 0.0);
}

TEST(Embedding, IndependentRandomImagesNearlyOrthogonal) {
  const ToyEmbedding emb;
  int ok = 0;
  for (int k = 0; k < 100; ++k) {
    Rng rng(1000 + k);
    const Image a = random_image(rng, 16, 16), b = random_image(rng, 16, 16);
    if (std::abs(cosine_sim(emb.embed(a), emb.embed(b))) < 0.5) ++ok;
  }
  EXPECT_GE(ok, 99);
}

TEST(Embedding, SameSeedSameProjection) {
  Rng rng(8);
  const Image x = synth_face(rng, 16, 16).image;
  EXPECT_EQ(ToyEmbedding().embed(x).v, ToyEmbedding().embed(x).v);
}

TEST(SynthFace, Deterministic) {
  Rng a(21), b(21);
  EXPECT_EQ(synth_face(a, 16, 16).image, synth_face(b, 16, 16).image);
}

TEST(SynthFace, EyesInsideHead) {
  for (int k = 0; k < 200; ++k) {
    Rng rng(k);
    const FaceParams p = synth_face(rng, 16, 16).params;
    for (int side : {-1, 1}) {
      const auto e = p.eye_center(side);
      const double u = (e[0] - p.head_cx) / p.head_ax, v = (e[1] - p.head_cy) / p.head_ay;
      EXPECT_LT(u * u + v * v, 1.0);
    }
  }
}

TEST(SynthFace, DistinguishableIdentities) {
  const ToyEmbedding emb;
  std::vector<Embedding> es;
  Rng rng(77);
  for (int k = 0; k < 100; ++k) es.push_back(emb.embed(synth_face(rng, 16, 16).image));
  double sum = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < es.size(); ++i)
    for (std::size_t j = i + 1; j < es.size(); ++j) sum += cosine_sim(es[i], es[j]), ++n;
  EXPECT_LT(sum / n, 0.9);
}

TEST(Ppm, WriteReadQuantization) {
  Rng rng(31);
  const Image x = random_image(rng, 5, 7);
  const auto path = (std::filesystem::temp_directory_path() / "wiretap_ppm_roundtrip.ppm").string();
  write_image(x, path);
  const Image y = read_image(path);
  std::filesystem::remove(path);
  ASSERT_TRUE(x.same_shape(y));
  for (std::size_t i = 0; i < x.values().size(); ++i) EXPECT_LE(std::abs(x.values()[i] - y.values()[i]), 1.0 / 255.0 + 1e-15);
}

TEST(Ppm, MinimalHeader) {
  std::string s = "P6\n2 2\n255\n";
  for (int i = 0; i < 12; ++i) s.push_back(static_cast<char>(i * 20));
  const std::vector<std::uint8_t> bytes(s.begin(), s.end());
  const Image x = decode_ppm(bytes);
  EXPECT_EQ(x.height(), 2);
  EXPECT_EQ(x.width(), 2);
  EXPECT_DOUBLE_EQ(x.at(1, 0, 0), 20 / 255.0);  // second byte is green of pixel (0,0)
}

TEST(Ppm, TruncatedNamesByteCounts) {
  std::string s = "P6\n2 2\n255\n" + std::string(5, 'x');
  const std::vector<std::uint8_t> bytes(s.begin(), s.end());
  try {
    decode_ppm(bytes);
    FAIL() << "expected ImageParseError";
  } catch (const ImageParseError& e) {
    const std::string w = e.what();
    EXPECT_NE(w.find("expected 12"), std::string::npos) << w;
    EXPECT_NE(w.find("got 5"), std::string::npos) << w;
  }
}

TEST(Ppm, BadMagicAndHeader) {
  const std::string a = "P3\n2 2\n255\n", b = "P6\n2 x\n255\n";
  EXPECT_THROW(decode_ppm(std::vector<std::uint8_t>(a.begin(), a.end())), ImageParseError);
  EXPECT_THROW(decode_ppm(std::vector<std::uint8_t>(b.begin(), b.end())), ImageParseError);
}
