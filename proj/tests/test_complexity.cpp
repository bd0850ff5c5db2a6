#include <gtest/gtest.h>

#include <random>

#include "bnasr/complexity.hpp"
#include "oracles.hpp"

using namespace bnasr;

using namespace bnasr::oracle;

TEST(ComplexityParams, Blocks) {
  EXPECT_EQ(count_params(ds2_block()), 251168u);
  EXPECT_EQ(count_params(block_a()), 10080u);
  EXPECT_EQ(count_params(block_b()), 65760u);
  // Per-layer weights + biases, then all batch-norm scale/shift terms.
  auto parts = [](const ConvBlockSpec& b) {
    std::vector<std::uint64_t> out;
    std::uint64_t bn = 0;
    for (const auto& l : report_block(b, 20).layers) {
      if (l.kind == "batchnorm") bn += l.params;
      else if (l.params) out.push_back(l.params);
    }
    out.push_back(bn);
    return out;
  };
  EXPECT_EQ(parts(ds2_block()), (std::vector<std::uint64_t>{14464, 236576, 128}));
  EXPECT_EQ(parts(block_a()), (std::vector<std::uint64_t>{704, 9248, 128}));
  EXPECT_EQ(parts(block_b()), (std::vector<std::uint64_t>{704, 9248, 18496, 36928, 384}));
}

TEST(ComplexityParams, PublishedRatios) {
  // Table values in thousands: 10.08, 65.76, 251.17.
  auto sig3 = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return std::string(buf);
  };
  EXPECT_EQ(sig3(double(count_params(block_b())) / double(count_params(block_a()))), sig3(65.76 / 10.08));
  EXPECT_EQ(sig3(double(count_params(ds2_block())) / double(count_params(block_b()))), sig3(251.17 / 65.76));
}

TEST(ComplexityParams, MatchesInstantiatedNetwork) {
  for (const char* name : {"A-3GRU", "B-3GRU"}) {
    const auto cfg = find_config(name);
    auto net = build_model<float>(cfg, 60);
    EXPECT_EQ(report(cfg, 60).total_params(), net.parameter_count()) << name;
  }
}

TEST(ComplexityParams, RecurrentAndLinear) {
  EXPECT_EQ(linear_params(10, 3), 33u);
  EXPECT_EQ(gru_params(512, 512), 3148800u);
  const auto r = report(custom_config("BlockA", 2, 512), 9);
  ASSERT_GE(r.layers.size(), 3u);
  EXPECT_EQ(r.layers[r.layers.size() - 3].params, gru_params(1312, 512));
  EXPECT_EQ(r.layers[r.layers.size() - 2].params, gru_params(512, 512));
  EXPECT_EQ(r.layers.back().params, linear_params(512, 10));
}

TEST(ComplexityFlops, UnitKernel) {
  const ConvBlockSpec unit{"unit", {{1, 1, 1, 1, 1, 1, 0, 0}}};
  EXPECT_EQ(count_macs(unit, 81, 10), 810u);
  FlopConvention macs_only;
  macs_only.bias_ops = macs_only.batchnorm_ops = macs_only.activation_ops = 0;
  EXPECT_EQ(count_flops(unit, 81, 10, macs_only), 1620u);
  EXPECT_EQ(count_flops(unit, 81, 10), 1620u + 810u + 2 * 810u + 810u);
}

TEST(ComplexityFlops, MatchesEnumerationOracle) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t bins = 8 + rng() % 40, frames = 3 + rng() % 30;
    const auto block = random_block(rng, bins, frames);
    for (bool skip : {false, true}) {
      FlopConvention c;
      c.skip_padding_taps = skip;
      c.flops_per_mac = 2 + rng() % 2;
      const Tally t = enumerate_flops(block, bins, frames, c);
      EXPECT_EQ(count_macs(block, bins, frames, c), t.macs) << "trial " << trial;
      EXPECT_EQ(count_flops(block, bins, frames, c), t.flops) << "trial " << trial;
    }
  }
}

TEST(ComplexityFlops, RealBlocksMatchOracle) {
  for (const auto& b : {block_a(), block_b(), ds2_block()}) {
    const Tally t = enumerate_flops(b, 81, 40, {});
    EXPECT_EQ(count_flops(b, 81, 40), t.flops) << b.name;
  }
}

TEST(ComplexityFlops, LinearInOutputFrames) {
  for (const auto& b : {block_a(), block_b(), ds2_block()}) {
    const std::uint64_t p = count_params(b);
    const std::uint64_t per_frame = count_flops(b, 81, 1);
    for (std::size_t t = 10; t <= 200; ++t) {
      EXPECT_EQ(count_flops(b, 81, t), per_frame * b.out_frames(t)) << b.name << " T=" << t;
      EXPECT_EQ(count_params(b), p);
    }
  }
}

TEST(ComplexityFlops, BlockOrdering) {
  for (std::size_t t : {1u, 50u, 300u, 1000u}) {
    EXPECT_LT(count_flops(block_a(), 81, t), count_flops(block_b(), 81, t));
    EXPECT_LT(count_flops(block_b(), 81, t), count_flops(ds2_block(), 81, t));
  }
}

TEST(ComplexityReport, TotalsAreSums) {
  const auto r = report(find_config("B-5GRU-Large"), 60);
  std::uint64_t p = 0, f = 0;
  for (const auto& l : r.layers) {
    p += l.params;
    f += l.flops;
  }
  EXPECT_EQ(r.total_params(), p);
  EXPECT_EQ(r.total_flops(), f);
  EXPECT_EQ(r.input_frames, 300u);
  EXPECT_EQ(r.output_frames, 150u);
}

TEST(ComplexityReport, TextAndKeyValues) {
  const auto r = report_block(block_a());
  const std::string kv = format_key_values(r);
  EXPECT_NE(kv.find("params_total=10080\n"), std::string::npos);
  EXPECT_NE(kv.find("input_frames=300\n"), std::string::npos);
  EXPECT_NE(kv.find("layer.conv.1.params=9248\n"), std::string::npos);
  const std::string table = format_table(r);
  EXPECT_NE(table.find("total"), std::string::npos);
  EXPECT_NE(table.find("10080"), std::string::npos);
  // Every table row has the same width.
  std::istringstream in(table);
  std::string line;
  std::getline(in, line);
  std::size_t width = 0;
  while (std::getline(in, line)) {
    if (!width) width = line.size();
    EXPECT_EQ(line.size(), width) << line;
  }
}

TEST(ComplexityReport, RejectsEmptyInput) { EXPECT_THROW(count_flops(block_a(), 81, 0), ConfigError); }
