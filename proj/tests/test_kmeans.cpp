#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "driftvq/kmeans.hpp"
#include "driftvq/updaters.hpp"
#include "support.hpp"

namespace driftvq {
namespace {

using testing::normal_matrix;

std::vector<std::vector<double>> sorted_rows(const Matrix& m) {
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < m.rows(); ++i) rows.emplace_back(m.row(i).begin(), m.row(i).end());
    std::sort(rows.begin(), rows.end());
    return rows;
}

TEST(Lloyd, SingleCodeIsTheMean) {
    const Matrix x = normal_matrix(200, 3, 1);
    std::vector<double> mean(3, 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < 3; ++j) mean[j] += x(i, j) / 200.0;
    }
    const LloydResult r = lloyd(x, 1, SeededInit{InitStrategy::random_sample, 4});
    EXPECT_TRUE(r.converged);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(r.codebook.code(0)[j], mean[j], 1e-12);
}

TEST(Lloyd, KEqualsNGivesZeroDistortion) {
    const Matrix x = normal_matrix(12, 2, 2);
    for (InitStrategy s : {InitStrategy::random_sample, InitStrategy::kmeans_plus_plus}) {
        const LloydResult r = lloyd(x, 12, SeededInit{s, 0});
        EXPECT_EQ(r.final_distortion, 0.0);
        EXPECT_EQ(sorted_rows(r.codebook.codes()), sorted_rows(x));
    }
}

TEST(Lloyd, TwoClustersOfTwo) {
    const Matrix x{{0, 0}, {0, 1}, {10, 0}, {10, 1}};
    const LloydResult r = lloyd(x, 2, SeededInit{InitStrategy::kmeans_plus_plus, 3});
    EXPECT_TRUE(r.converged);
    EXPECT_EQ(sorted_rows(r.codebook.codes()),
              (std::vector<std::vector<double>>{{0, 0.5}, {10, 0.5}}));
    EXPECT_DOUBLE_EQ(r.final_distortion, 0.25);
}

TEST(Lloyd, FinalDistortionMatchesCodebook) {
    const Matrix x = normal_matrix(300, 2, 5);
    const LloydResult r = lloyd(x, 6, SeededInit{InitStrategy::kmeans_plus_plus, 5});
    EXPECT_EQ(r.final_distortion, distortion(x, r.codebook));
    EXPECT_EQ(r.distortion_history.back(), r.final_distortion);
    EXPECT_EQ(r.distortion_history.size(), r.iterations + 1);
}

TEST(Lloyd, InfeasibleAndBadOptions) {
    const Matrix x = normal_matrix(3, 2, 0);
    EXPECT_THROW(lloyd(x, 4, SeededInit{}), InfeasibleError);
    EXPECT_THROW(lloyd(x, 2, SeededInit{}, LloydOptions{10, 0.0}), InvalidInput);
}

TEST(Lloyd, DistortionNeverIncreases) {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t k = 2 + rng() % 12;
        const Matrix x = normal_matrix(100 + rng() % 200, 1 + rng() % 3, rng());
        const InitStrategy s = trial % 2 ? InitStrategy::random_sample : InitStrategy::kmeans_plus_plus;
        const LloydResult r = lloyd(x, k, SeededInit{s, rng()});
        for (std::size_t i = 1; i < r.distortion_history.size(); ++i) {
            ASSERT_LE(r.distortion_history[i], r.distortion_history[i - 1] + 1e-12);
        }
    }
}

TEST(Lloyd, RestartAtFixedPointStopsImmediately) {
    const Matrix x = normal_matrix(400, 2, 6);
    const LloydResult first = lloyd(x, 8, SeededInit{InitStrategy::kmeans_plus_plus, 1});
    ASSERT_TRUE(first.converged);
    const LloydResult again = lloyd(x, 8, first.codebook);
    EXPECT_LE(again.iterations, 1u);
    EXPECT_TRUE(again.converged);
}

TEST(Lloyd, EmptyCellIsReseeded) {
    // Code 1 starts far from all data and owns nothing on the first pass.
    const Matrix x{{0, 0}, {0.1, 0}, {5, 0}, {5.1, 0}};
    const LloydResult r = lloyd(x, 2, Codebook(Matrix{{2, 0}, {100, 100}}));
    const CellMeans cm = cell_means(x, r.codebook);
    EXPECT_GT(cm.counts[0], 0u);
    EXPECT_GT(cm.counts[1], 0u);
    EXPECT_NEAR(r.final_distortion, 0.0025, 1e-12);
}

TEST(FixedPoint, ConvergedLloydIsFixedPoint) {
    const Matrix x = normal_matrix(500, 2, 7);
    const LloydResult r = lloyd(x, 5, SeededInit{InitStrategy::kmeans_plus_plus, 2});
    EXPECT_TRUE(is_fixed_point(x, r.codebook, 1e-8));
}

TEST(FixedPoint, SingleCodeOffTheMean) {
    const Matrix x{{0, 0}, {2, 0}};
    EXPECT_FALSE(is_fixed_point(x, Codebook(Matrix{{0.5, 0}}), 1e-8));
    EXPECT_TRUE(is_fixed_point(x, Codebook(Matrix{{1, 0}}), 1e-8));
}

TEST(FixedPoint, SmallPerturbationBreaksIt) {
    const Matrix x = normal_matrix(500, 2, 8);
    const double tol = 1e-8;
    const LloydResult r = lloyd(x, 4, SeededInit{InitStrategy::kmeans_plus_plus, 3},
                                LloydOptions{500, 1e-12});
    ASSERT_TRUE(is_fixed_point(x, r.codebook, tol));
    Codebook moved = r.codebook;
    moved.mutable_code(0)[0] += 10 * tol;
    // The shift is far below any point's margin, so no assignment changes
    // and the cell means are the same as before.
    EXPECT_EQ(assign_batch(x, moved).winners, assign_batch(x, r.codebook).winners);
    EXPECT_FALSE(is_fixed_point(x, moved, tol));
}

TEST(FixedPoint, FullBatchVanillaUpdateDoesNotMove) {
    const Matrix x = normal_matrix(1500, 2, 9);
    const LloydResult r = lloyd(x, 16, SeededInit{InitStrategy::kmeans_plus_plus, 4});
    ASSERT_TRUE(r.converged);
    for (double alpha : {0.1, 0.3, 1.0}) {
        Codebook cb = r.codebook;
        const StepReport step = ema_batch_step(cb, x, alpha);
        for (double v : step.displacement.flat()) EXPECT_LT(std::abs(v), 1e-7);
    }
}

TEST(InitCodebook, KEqualsNReturnsDataset) {
    const Matrix x = normal_matrix(5, 2, 10);
    for (InitStrategy s : {InitStrategy::random_sample, InitStrategy::kmeans_plus_plus}) {
        EXPECT_EQ(init_codebook(x, 5, SeededInit{s, 99}).codes(), x);
    }
}

TEST(InitCodebook, DeterministicUnderSeed) {
    const Matrix x = normal_matrix(100, 2, 11);
    for (InitStrategy s : {InitStrategy::random_sample, InitStrategy::kmeans_plus_plus}) {
        EXPECT_EQ(init_codebook(x, 7, SeededInit{s, 5}), init_codebook(x, 7, SeededInit{s, 5}));
    }
}

TEST(InitCodebook, RowsAreDistinctDataPoints) {
    const Matrix x = normal_matrix(60, 2, 12);
    const Codebook cb = init_codebook(x, 10, SeededInit{InitStrategy::random_sample, 8});
    const auto rows = sorted_rows(cb.codes());
    EXPECT_EQ(std::adjacent_find(rows.begin(), rows.end()), rows.end());
    const auto data = sorted_rows(x);
    for (const auto& r : rows) EXPECT_TRUE(std::binary_search(data.begin(), data.end(), r));
}

TEST(InitCodebook, TooFewDistinctPoints) {
    const Matrix x{{1, 1}, {1, 1}, {1, 1}, {2, 2}};
    EXPECT_THROW(init_codebook(x, 3, SeededInit{InitStrategy::random_sample, 0}), DegenerateInput);
    EXPECT_THROW(init_codebook(x, 3, SeededInit{InitStrategy::kmeans_plus_plus, 0}), DegenerateInput);
    EXPECT_THROW(init_codebook(x, 5, SeededInit{}), InfeasibleError);
}

TEST(InitCodebook, ExplicitCodebookIsChecked) {
    const Matrix x = normal_matrix(10, 2, 0);
    const Codebook ok(Matrix{{0, 0}, {1, 1}});
    EXPECT_EQ(init_codebook(x, 2, ok), ok);
    EXPECT_THROW(init_codebook(x, 3, ok), ShapeError);
}

TEST(InitCodebook, KMeansPlusPlusSplitsSeparatedClusters) {
    // Two tight clusters 100 apart: D^2 sampling puts the second seed in the
    // other cluster with probability ~1 - 1e-5 per trial.
    int hits = 0;
    for (std::uint64_t trial = 0; trial < 100; ++trial) {
        Matrix x = normal_matrix(200, 2, 1000 + trial, 0.5);
        for (std::size_t i = 100; i < 200; ++i) x(i, 0) += 100.0;
        const Codebook cb = init_codebook(x, 2, SeededInit{InitStrategy::kmeans_plus_plus, trial});
        const bool left0 = cb.code(0)[0] < 50.0;
        const bool left1 = cb.code(1)[0] < 50.0;
        if (left0 != left1) ++hits;
    }
    EXPECT_GE(hits, 99);
}

}  // namespace
}  // namespace driftvq
