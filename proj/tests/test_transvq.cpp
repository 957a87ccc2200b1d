#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "driftvq/errors.hpp"
#include "driftvq/transvq.hpp"
#include "support.hpp"

namespace driftvq {
namespace {

using testing::max_abs_diff;
using testing::normal_matrix;
using PT = ProjectorTensor;

constexpr PT kAllTensors[] = {
    PT::embed_in, PT::b_in, PT::w_q, PT::b_q, PT::w_k, PT::b_k, PT::w_v, PT::b_v,
    PT::w_o, PT::b_o, PT::w_mlp_in, PT::b_mlp_in, PT::w_mlp_out, PT::b_mlp_out, PT::embed_out,
};

// Straight textbook loops, kept apart from the library's templated kernels.
Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t l = 0; l < a.cols(); ++l) s += a(i, l) * b(l, j);
            out(i, j) = s;
        }
    return out;
}

Matrix plus_bias(Matrix a, const Matrix& bias) {
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) a(i, j) += bias(0, j);
    return a;
}

Matrix plus(Matrix a, const Matrix& b) {
    for (std::size_t i = 0; i < a.flat().size(); ++i) a.flat()[i] += b.flat()[i];
    return a;
}

Matrix naive_project(const ProjectorParams& p, const Matrix& c) {
    auto t = [&](PT x) -> const Matrix& { return p.tensor(x); };
    const Matrix h0 = plus_bias(matmul(c, t(PT::embed_in)), t(PT::b_in));
    const Matrix q = plus_bias(matmul(h0, t(PT::w_q)), t(PT::b_q));
    const Matrix k = plus_bias(matmul(h0, t(PT::w_k)), t(PT::b_k));
    const Matrix v = plus_bias(matmul(h0, t(PT::w_v)), t(PT::b_v));
    Matrix s(c.rows(), c.rows());
    const double inv = 1.0 / std::sqrt(static_cast<double>(p.config().d_model));
    for (std::size_t i = 0; i < c.rows(); ++i)
        for (std::size_t j = 0; j < c.rows(); ++j) {
            double dot = 0.0;
            for (std::size_t l = 0; l < q.cols(); ++l) dot += q(i, l) * k(j, l);
            s(i, j) = dot * inv;
        }
    const Matrix d1 = plus_bias(matmul(matmul(s, v), t(PT::w_o)), t(PT::b_o));
    const Matrix h1 = plus(h0, d1);
    Matrix u = plus_bias(matmul(h1, t(PT::w_mlp_in)), t(PT::b_mlp_in));
    for (double& x : u.flat()) x = std::tanh(x);
    const Matrix d2 = plus_bias(matmul(u, t(PT::w_mlp_out)), t(PT::b_mlp_out));
    return plus(c, matmul(plus(d1, d2), t(PT::embed_out)));
}

Codebook random_base(std::size_t k, std::size_t d, std::uint64_t seed) {
    return Codebook(normal_matrix(k, d, seed));
}

TEST(ProjectorConfig, Presets) {
    EXPECT_EQ(ProjectorConfig::toy(3).d_model, 16u);
    EXPECT_EQ(ProjectorConfig::large(3).d_model, 256u);
    EXPECT_EQ(ProjectorConfig::toy(3).hidden(), 32u);
}

TEST(ProjectorTensor, NamesRoundTrip) {
    for (PT t : kAllTensors) EXPECT_EQ(parse_tensor_name(tensor_name(t)), t);
    EXPECT_EQ(parse_tensor_name("w_x"), std::nullopt);
    EXPECT_EQ(parse_tensor_name(""), std::nullopt);
}

TEST(ProjectorParams, ShapesAndCount) {
    const auto p = ProjectorParams::zeros({2, 16, 2});
    EXPECT_EQ(p.tensor(PT::embed_in).rows(), 2u);
    EXPECT_EQ(p.tensor(PT::embed_in).cols(), 16u);
    EXPECT_EQ(p.tensor(PT::b_in).rows(), 1u);
    EXPECT_EQ(p.tensor(PT::w_mlp_in).cols(), 32u);
    EXPECT_EQ(p.tensor(PT::w_mlp_out).rows(), 32u);
    EXPECT_EQ(p.tensor(PT::embed_out).cols(), 2u);
    // 32+16 + 4*(256+16) + 512+32 + 512+16 + 32
    EXPECT_EQ(p.parameter_count(), 2240u);
}

TEST(ProjectorParams, MutationBumpsVersion) {
    auto p = ProjectorParams::random(ProjectorConfig::toy(2), 1, false);
    const auto v0 = p.version();
    p.mutable_tensor(PT::w_q)(0, 0) += 1.0;
    EXPECT_NE(p.version(), v0);
    const auto v1 = p.version();
    p.axpy(0.5, ProjectorParams::zeros(ProjectorConfig::toy(2)));
    EXPECT_NE(p.version(), v1);
}

TEST(ProjectorParams, AxpyRejectsMismatchedConfig) {
    auto p = ProjectorParams::zeros(ProjectorConfig::toy(2));
    EXPECT_THROW(p.axpy(1.0, ProjectorParams::zeros(ProjectorConfig::toy(3))), ShapeError);
}

TEST(ProjectorParams, RandomIsSeeded) {
    const auto cfg = ProjectorConfig::toy(2);
    EXPECT_EQ(ProjectorParams::random(cfg, 5, false), ProjectorParams::random(cfg, 5, false));
    EXPECT_FALSE(ProjectorParams::random(cfg, 5, false) == ProjectorParams::random(cfg, 6, false));
}

TEST(Project, IdentityInitIsExact) {
    for (std::size_t k : {1u, 4u, 16u, 64u}) {
        for (std::size_t d : {1u, 2u, 3u}) {
            for (const auto& cfg : {ProjectorConfig::toy(d), ProjectorConfig::large(d)}) {
                const auto p = ProjectorParams::random(cfg, 100 + k + d, true);
                const Codebook base = random_base(k, d, k * 10 + d);
                const Projection out = project(p, base);
                EXPECT_EQ(out.codebook.codes(), base.codes()) << "K=" << k << " d=" << d;
            }
        }
    }
}

TEST(Project, IdentityHoldsEvenForHugeInnerWeights) {
    auto p = ProjectorParams::random(ProjectorConfig::toy(2), 3, true, 50.0);
    const Codebook base = random_base(8, 2, 4);
    EXPECT_EQ(project(p, base).codebook.codes(), base.codes());
}

TEST(Project, SingleCodeIsFinite) {
    const auto p = ProjectorParams::random(ProjectorConfig::toy(2), 9, false);
    const Codebook base(Matrix{{0.3, -0.7}});
    const Projection out = project(p, base);
    EXPECT_TRUE(out.codebook.codes().all_finite());
    EXPECT_EQ(out.tape.scores.rows(), 1u);
}

TEST(Project, MatchesNaiveReference) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto p = ProjectorParams::random(ProjectorConfig::toy(2), seed, false);
        const Codebook base = random_base(4, 2, seed + 50);
        const Matrix ref = naive_project(p, base.codes());
        EXPECT_LT(max_abs_diff(project(p, base).codebook.codes(), ref), 1e-12);
    }
    const auto p = ProjectorParams::random({3, 8, 3}, 11, false);
    const Codebook base = random_base(7, 3, 12);
    EXPECT_LT(max_abs_diff(project(p, base).codebook.codes(), naive_project(p, base.codes())),
              1e-12);
}

TEST(Project, TapeReplayIsBitIdentical) {
    const auto p = ProjectorParams::random(ProjectorConfig::toy(3), 2, false);
    const Codebook base = random_base(16, 3, 3);
    const Projection a = project(p, base);
    const Projection b = project(p, base);
    EXPECT_EQ(a.codebook.codes(), b.codebook.codes());
    EXPECT_EQ(a.tape.scores, b.tape.scores);
    EXPECT_EQ(a.tape.u, b.tape.u);
    EXPECT_EQ(a.tape.params_version, p.version());
    EXPECT_EQ(a.tape.output, a.codebook.codes());
}

TEST(Project, RejectsDimensionMismatch) {
    const auto p = ProjectorParams::zeros(ProjectorConfig::toy(2));
    EXPECT_THROW(project(p, random_base(4, 3, 0)), ShapeError);
}

TEST(EmbeddingLoss, Examples) {
    const std::vector<double> a{1.0, 0.0}, b{0.0, 0.0}, c{1.0, 2.0}, e{-1.0, 4.0};
    auto l = embedding_loss(a, b);
    EXPECT_DOUBLE_EQ(l.loss, 1.0);
    EXPECT_EQ(l.gradient, (std::vector<double>{2.0, 0.0}));
    l = embedding_loss(c, c);
    EXPECT_EQ(l.loss, 0.0);
    EXPECT_EQ(l.gradient, (std::vector<double>{0.0, 0.0}));
    l = embedding_loss(c, e);
    EXPECT_DOUBLE_EQ(l.loss, 8.0);
    EXPECT_EQ(l.gradient, (std::vector<double>{4.0, -4.0}));
    EXPECT_THROW(embedding_loss(a, std::vector<double>{1.0}), ShapeError);
}

TEST(Backward, ZeroUpstreamGivesZeroGradient) {
    const auto p = ProjectorParams::random(ProjectorConfig::toy(2), 4, false);
    const Codebook base = random_base(5, 2, 5);
    const Projection f = project(p, base);
    const auto g = backward(p, f.tape, Matrix(5, 2));
    EXPECT_EQ(g, ProjectorParams::zeros(ProjectorConfig::toy(2)));
}

TEST(Backward, LinearInUpstream) {
    const auto p = ProjectorParams::random(ProjectorConfig::toy(2), 6, false);
    const Codebook base = random_base(6, 2, 7);
    const Projection f = project(p, base);
    const Matrix r1 = normal_matrix(6, 2, 8), r2 = normal_matrix(6, 2, 9);
    const auto g1 = backward(p, f.tape, r1);
    const auto g2 = backward(p, f.tape, r2);
    const auto g12 = backward(p, f.tape, plus(r1, r2));
    auto sum = g1;
    sum.axpy(1.0, g2);
    for (PT t : kAllTensors) {
        const Matrix& a = sum.tensor(t);
        const Matrix& b = g12.tensor(t);
        for (std::size_t i = 0; i < a.flat().size(); ++i) {
            EXPECT_NEAR(a.flat()[i], b.flat()[i], 1e-10 * (1.0 + std::abs(b.flat()[i])))
                << tensor_name(t);
        }
    }
}

TEST(Backward, StaleTapeIsRejected) {
    auto p = ProjectorParams::random(ProjectorConfig::toy(2), 1, false);
    const Codebook base = random_base(4, 2, 1);
    const Projection f = project(p, base);
    p.mutable_tensor(PT::b_v)(0, 0) = 0.0;
    EXPECT_THROW(backward(p, f.tape, Matrix(4, 2)), InvalidState);
}

TEST(Backward, UpstreamShapeMustMatch) {
    const auto p = ProjectorParams::random(ProjectorConfig::toy(2), 1, false);
    const Projection f = project(p, random_base(4, 2, 1));
    EXPECT_THROW(backward(p, f.tape, Matrix(4, 3)), ShapeError);
    EXPECT_THROW(backward(p, f.tape, Matrix(3, 2)), ShapeError);
}

TEST(Backward, IdentityInitOnlyFeedsOutputProjections) {
    // D1 = D2 = 0 and W_o = W_2 = 0 block every path except the last linear maps.
    const auto p = ProjectorParams::random(ProjectorConfig::toy(2), 12, true);
    const Codebook base = random_base(8, 2, 13);
    const auto g = backward(p, project(p, base).tape, normal_matrix(8, 2, 14));
    for (PT t : kAllTensors) {
        const bool live = t == PT::w_o || t == PT::b_o || t == PT::w_mlp_out || t == PT::b_mlp_out;
        double mag = 0.0;
        for (double x : g.tensor(t).flat()) mag = std::max(mag, std::abs(x));
        if (live) {
            EXPECT_GT(mag, 0.0) << tensor_name(t);
        } else {
            EXPECT_EQ(mag, 0.0) << tensor_name(t);
        }
    }
}

TEST(GradientCheck, SmallShapeAgrees) {
    const auto p = ProjectorParams::random({2, 8, 2}, 21, false);
    const auto r = gradient_check(p, random_base(4, 2, 22), 1e-5);
    EXPECT_LE(r.max_relative_error, 1e-5) << tensor_name(r.worst_tensor);
}

TEST(GradientCheck, IdentityInitAgrees) {
    const auto p = ProjectorParams::random({3, 8, 2}, 23, true);
    const auto r = gradient_check(p, random_base(5, 3, 24), 1e-5);
    EXPECT_LE(r.max_relative_error, 1e-5) << tensor_name(r.worst_tensor);
}

TEST(GradientCheck, AllZeroParamsAgree) {
    const auto p = ProjectorParams::zeros({2, 8, 2});
    const auto r = gradient_check(p, random_base(3, 2, 25), 1e-5);
    EXPECT_LE(r.max_relative_error, 1e-5);
}

TEST(GradientCheck, DetectsInjectedFault) {
    const auto p = ProjectorParams::random({2, 8, 2}, 21, false);
    const Codebook base = random_base(4, 2, 22);
    for (PT t : {PT::w_q, PT::b_mlp_in, PT::embed_out}) {
        const auto r = gradient_check(p, base, 1e-5, 0, GradientFault{t, 2.0});
        EXPECT_GT(r.max_relative_error, 1e-2) << tensor_name(t);
        EXPECT_EQ(r.worst_tensor, t);
    }
}

// Rank of a dense row set by Gaussian elimination with partial pivoting.
std::size_t numeric_rank(std::vector<std::vector<double>> rows, double tol) {
    std::size_t rank = 0;
    const std::size_t cols = rows.empty() ? 0 : rows[0].size();
    for (std::size_t c = 0; c < cols && rank < rows.size(); ++c) {
        std::size_t piv = rank;
        for (std::size_t r = rank; r < rows.size(); ++r)
            if (std::abs(rows[r][c]) > std::abs(rows[piv][c])) piv = r;
        if (std::abs(rows[piv][c]) <= tol) continue;
        std::swap(rows[piv], rows[rank]);
        for (std::size_t r = rank + 1; r < rows.size(); ++r) {
            const double f = rows[r][c] / rows[rank][c];
            for (std::size_t j = c; j < cols; ++j) rows[r][j] -= f * rows[rank][j];
        }
        ++rank;
    }
    return rank;
}

TEST(Backward, JacobianHasFullOutputRank) {
    // Every code row can move independently, which is what lets one update
    // reach codes that never win.
    for (std::size_t k : {4u, 16u}) {
        const auto p = ProjectorParams::random(ProjectorConfig::toy(2), 30 + k, false);
        const Codebook base = random_base(k, 2, 40 + k);
        const Projection f = project(p, base);
        std::vector<std::vector<double>> jac;
        for (std::size_t i = 0; i < k * 2; ++i) {
            Matrix up(k, 2);
            up.flat()[i] = 1.0;
            const auto g = backward(p, f.tape, up);
            std::vector<double> row;
            for (PT t : kAllTensors)
                for (double x : g.tensor(t).flat()) row.push_back(x);
            jac.push_back(std::move(row));
        }
        EXPECT_EQ(numeric_rank(jac, 1e-9), k * 2) << "K=" << k;
    }
}

TEST(TrainStep, ZeroLearningRateChangesNothing) {
    auto p = ProjectorParams::random(ProjectorConfig::toy(2), 50, false);
    const auto before = p;
    const Codebook base = random_base(6, 2, 51);
    const std::vector<double> e{0.5, -0.5};
    const auto rep = train_step(p, base, e, 2, 0.0);
    EXPECT_EQ(p, before);
    EXPECT_EQ(rep.loss_before, rep.loss_after);
    for (double n : rep.displacement_norms) EXPECT_EQ(n, 0.0);
}

TEST(TrainStep, MovesEveryCode) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto p = ProjectorParams::random(ProjectorConfig::toy(2), seed, false);
        const Codebook base = random_base(8, 2, seed + 100);
        const std::vector<double> e{1.5, -0.25};
        const auto rep = train_step(p, base, e, seed % 8, 0.05);
        ASSERT_EQ(rep.displacement_norms.size(), 8u);
        for (double n : rep.displacement_norms) EXPECT_GT(n, 1e-12);
    }
}

TEST(TrainStep, SmallStepsDescend) {
    const auto p0 = ProjectorParams::random(ProjectorConfig::toy(2), 60, false);
    const Codebook base = random_base(8, 2, 61);
    const std::vector<double> e{2.0, 1.0};
    bool descended = false;
    for (double lr = 0.1; lr > 1e-6 && !descended; lr *= 0.5) {
        auto p = p0;
        const auto rep = train_step(p, base, e, 3, lr);
        descended = rep.loss_after < rep.loss_before;
    }
    EXPECT_TRUE(descended);
}

TEST(TrainStep, BaseCodebookStaysFrozen) {
    auto p = ProjectorParams::random(ProjectorConfig::toy(2), 70, true);
    const Codebook base = random_base(8, 2, 71);
    const Codebook copy = base;
    const std::vector<double> e{0.0, 3.0};
    for (int s = 0; s < 50; ++s) train_step(p, base, e, static_cast<std::size_t>(s) % 8, 1e-3);
    EXPECT_EQ(base, copy);
    EXPECT_FALSE(project(p, base).codebook.codes() == base.codes());
}

TEST(TrainStep, ReportMatchesProjection) {
    auto p = ProjectorParams::random(ProjectorConfig::toy(2), 80, false);
    const Codebook base = random_base(5, 2, 81);
    const std::vector<double> e{0.1, 0.2};
    const Matrix before = project(p, base).codebook.codes();
    const auto rep = train_step(p, base, e, 1, 0.02);
    EXPECT_EQ(rep.before, before);
    EXPECT_EQ(rep.after, project(p, base).codebook.codes());
    EXPECT_DOUBLE_EQ(rep.loss_before, embedding_loss(before.row(1), e).loss);
}

TEST(TrainStep, RejectsBadInputs) {
    auto p = ProjectorParams::random(ProjectorConfig::toy(2), 1, false);
    const Codebook base = random_base(4, 2, 1);
    const std::vector<double> e{0.0, 0.0};
    EXPECT_THROW(train_step(p, base, e, 4, 0.1), InvalidInput);
    EXPECT_THROW(train_step(p, base, std::vector<double>{0.0}, 0, 0.1), ShapeError);
    EXPECT_THROW(train_step(p, random_base(4, 3, 1), std::vector<double>{0, 0, 0}, 0, 0.1),
                 ShapeError);
}

TEST(SaveLoad, RoundTripIsLossless) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto p = ProjectorParams::random({3, 8, 2}, seed, seed == 1, 3.7);
        std::stringstream ss;
        save_params(ss, p);
        EXPECT_EQ(load_params(ss), p);
    }
}

std::string saved_text() {
    std::stringstream ss;
    save_params(ss, ProjectorParams::random({2, 4, 1}, 0, false));
    return ss.str();
}

TEST(SaveLoad, RejectsMalformedFiles) {
    auto expect_bad = [](const std::string& text) {
        std::stringstream ss(text);
        EXPECT_THROW(load_params(ss), ConfigError) << text.substr(0, 60);
    };
    const std::string good = saved_text();
    expect_bad("");
    expect_bad("something-else 1\n");
    std::string v2 = good;
    v2.replace(v2.find(" 1\n"), 3, " 2\n");
    expect_bad(v2);
    expect_bad(good.substr(0, good.size() / 2));
    std::string renamed = good;
    renamed.replace(renamed.find("w_q"), 3, "w_z");
    expect_bad(renamed);
    std::string reshaped = good;
    reshaped.replace(reshaped.find("b_in 1 4"), 8, "b_in 1 5");
    expect_bad(reshaped);
    std::string garbage = good;
    garbage.replace(garbage.rfind('\n', garbage.size() - 2) + 1, 1, "x");
    expect_bad(garbage);
}

}  // namespace
}  // namespace driftvq
