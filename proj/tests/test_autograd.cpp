#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <sstream>

#include "dpig/ops.hpp"
#include "dpig/paramset.hpp"
#include "testutil.hpp"

using namespace dpig;
using namespace testutil;

TEST_CASE("forward: identity graph returns its input") {
    Tensor x = Tensor::vec({1.0, 2.0, 3.0});
    Tape t;
    ValueId id = ops::reshape(t, t.leaf(x), {3});
    CHECK(t.value(id).data == std::vector<double>{1.0, 2.0, 3.0});
}

TEST_CASE("forward: 1x1 conv with weight 2 doubles an all-ones input") {
    Tensor x = Tensor::full({1, 1, 2, 2}, 1.0);
    Tensor w = Tensor::full({1, 1, 1, 1}, 2.0);
    Tensor b = Tensor::zeros({1});
    Tape t;
    ValueId y = ops::conv2d(t, t.leaf(x), t.leaf(w), t.leaf(b), 1, 0);
    for (double v : t.value(y).data) CHECK(v == 2.0);
}

namespace {

// untaped duplicate of dense -> relu -> dense
std::vector<double> straightline_3layer(const Tensor& x, const Tensor& w1, const Tensor& b1,
                                        const Tensor& w2, const Tensor& b2) {
    const int64_t m = x.shape[0], in = x.shape[1];
    const int64_t h = w1.shape[0], out = w2.shape[0];
    std::vector<double> hidden(static_cast<size_t>(m * h));
    for (int64_t n = 0; n < m; ++n) {
        for (int64_t o = 0; o < h; ++o) {
            double acc = b1.data[static_cast<size_t>(o)];
            for (int64_t i = 0; i < in; ++i) {
                acc += x.data[static_cast<size_t>(n * in + i)] * w1.data[static_cast<size_t>(o * in + i)];
            }
            hidden[static_cast<size_t>(n * h + o)] = acc;
        }
    }
    for (auto& v : hidden) v = v > 0.0 ? v : 0.0;
    std::vector<double> result(static_cast<size_t>(m * out));
    for (int64_t n = 0; n < m; ++n) {
        for (int64_t o = 0; o < out; ++o) {
            double acc = b2.data[static_cast<size_t>(o)];
            for (int64_t i = 0; i < h; ++i) {
                acc += hidden[static_cast<size_t>(n * h + i)] * w2.data[static_cast<size_t>(o * h + i)];
            }
            result[static_cast<size_t>(n * out + o)] = acc;
        }
    }
    return result;
}

}  // namespace

TEST_CASE("forward: 3-layer net matches an untaped duplicate bitwise") {
    Rng rng(0);
    Tensor x = random_tensor({2, 4}, rng);
    Tensor w1 = random_tensor({5, 4}, rng, 0.5);
    Tensor b1 = random_tensor({5}, rng, 0.1);
    Tensor w2 = random_tensor({3, 5}, rng, 0.5);
    Tensor b2 = random_tensor({3}, rng, 0.1);
    Tape t;
    ValueId y = ops::dense(t, ops::relu(t, ops::dense(t, t.leaf(x), t.leaf(w1), t.leaf(b1))),
                           t.leaf(w2), t.leaf(b2));
    CHECK(bitwise_equal(t.value(y).data, straightline_3layer(x, w1, b1, w2, b2)));
}

TEST_CASE("backward: sum of parameters gives unit gradients") {
    Tensor w = Tensor::vec({4.0, -1.0, 7.0});
    w.requires_grad = true;
    Tape t;
    t.backward(ops::sum_all(t, t.leaf(w)));
    CHECK(w.grad == std::vector<double>{1.0, 1.0, 1.0});
}

TEST_CASE("backward: sum of squares gives 2w") {
    Tensor w = Tensor::vec({1.0, -2.0, 3.0});
    w.requires_grad = true;
    Tape t;
    ValueId wi = t.leaf(w);
    t.backward(ops::sum_all(t, ops::mul(t, wi, wi)));
    CHECK(w.grad == std::vector<double>{2.0, -4.0, 6.0});
}

TEST_CASE("backward: consumed tape and non-scalar output are rejected") {
    Tensor w = Tensor::vec({1.0, 2.0});
    w.requires_grad = true;
    Tape t;
    ValueId wi = t.leaf(w);
    ValueId s = ops::sum_all(t, wi);
    t.backward(s);
    CHECK_THROWS_AS(t.backward(s), Error);

    Tape t2;
    CHECK_THROWS_AS(t2.backward(t2.leaf(w)), ShapeError);
}

TEST_CASE("backward: unreachable parameters get zero gradients") {
    Tensor used = Tensor::vec({2.0});
    Tensor unused = Tensor::vec({3.0});
    used.requires_grad = unused.requires_grad = true;
    Tape t;
    ValueId ui = t.leaf(used);
    t.leaf(unused);
    t.backward(ops::sum_all(t, ui));
    CHECK(used.grad == std::vector<double>{1.0});
    CHECK(unused.grad == std::vector<double>{0.0});
}

TEST_CASE("gradcheck: every elementwise op against finite differences") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        Tensor x = random_tensor({3, 4}, rng);
        x.requires_grad = true;
        Tensor k = random_tensor({3, 4}, rng);  // fixed weights exercising all outputs
        Tensor other = random_tensor({3, 4}, rng, 0.5);
        for (auto& v : other.data) v += v > 0 ? 1.5 : -1.5;  // keep div well away from 0

        struct Case {
            const char* name;
            std::function<ValueId(Tape&, ValueId)> build;
        };
        std::vector<Case> cases = {
            {"relu", [](Tape& t, ValueId v) { return ops::relu(t, v); }},
            {"leaky_relu", [](Tape& t, ValueId v) { return ops::leaky_relu(t, v, 0.2); }},
            {"sigmoid", [](Tape& t, ValueId v) { return ops::sigmoid(t, v); }},
            {"exp", [](Tape& t, ValueId v) { return ops::exp(t, v); }},
            {"affine", [](Tape& t, ValueId v) { return ops::affine(t, v, -1.7, 0.3); }},
            {"log", [](Tape& t, ValueId v) { return ops::log(t, ops::affine(t, ops::sigmoid(t, v), 1.0, 0.5)); }},
            {"mul_self", [](Tape& t, ValueId v) { return ops::mul(t, v, v); }},
            {"clamp", [](Tape& t, ValueId v) { return ops::clamp(t, v, -0.35, 0.45); }},
            {"clamp_min", [](Tape& t, ValueId v) { return ops::clamp_min(t, v, -0.15); }},
            {"sum_cols", [](Tape& t, ValueId v) { return ops::reshape(t, ops::sum_cols(t, v), {3, 1}); }},
            {"slice", [](Tape& t, ValueId v) { return ops::slice_cols(t, v, 1, 3); }},
        };
        for (auto& c : cases) {
            auto eval = [&]() {
                Tape t;
                ValueId y = c.build(t, t.leaf(x));
                const Tensor& yv = t.value(y);
                Tensor kk(yv.shape, std::vector<double>(k.data.begin(),
                                                        k.data.begin() + yv.numel()));
                return t.value(ops::mean_all(t, ops::mul(t, y, t.constant(kk)))).data[0];
            };
            x.zero_grad();
            {
                Tape t;
                ValueId xi = t.leaf(x);
                ValueId y = c.build(t, xi);
                const Tensor& yv = t.value(y);
                Tensor kk(yv.shape, std::vector<double>(k.data.begin(),
                                                        k.data.begin() + yv.numel()));
                t.backward(ops::mean_all(t, ops::mul(t, y, t.constant(kk))));
            }
            const auto res = check_grad_fd(x, x.grad, eval);
            INFO(c.name, " seed ", seed, " max_rel_err ", res.max_rel_err);
            CHECK(res.max_rel_err < 1e-4);
        }

        // binary ops w.r.t. both operands
        for (int alt = 0; alt < 2; ++alt) {
            Tensor& target = alt == 0 ? x : other;
            target.requires_grad = true;
            auto eval = [&]() {
                Tape t;
                ValueId y = ops::div(t, ops::add(t, t.leaf(x), t.leaf(other)),
                                     ops::sub(t, t.leaf(other), ops::affine(t, t.leaf(x), 0.1, 3.0)));
                return t.value(ops::mean_all(t, ops::mul(t, y, t.constant(k)))).data[0];
            };
            x.zero_grad();
            other.zero_grad();
            {
                Tape t;
                ValueId y = ops::div(t, ops::add(t, t.leaf(x), t.leaf(other)),
                                     ops::sub(t, t.leaf(other), ops::affine(t, t.leaf(x), 0.1, 3.0)));
                t.backward(ops::mean_all(t, ops::mul(t, y, t.constant(k))));
            }
            const auto res = check_grad_fd(target, target.grad, eval);
            CHECK(res.max_rel_err < 1e-4);
        }
    }
}

TEST_CASE("gradcheck: dense, conv2d, tconv2d, batch_norm, cross entropy") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed + 100);
        // dense
        {
            Tensor x = random_tensor({3, 5}, rng);
            Tensor w = random_tensor({4, 5}, rng, 0.5);
            Tensor b = random_tensor({4}, rng, 0.2);
            Tensor k = random_tensor({3, 4}, rng);
            for (Tensor* target : {&x, &w, &b}) {
                target->requires_grad = true;
                auto eval = [&]() {
                    Tape t;
                    ValueId y = ops::dense(t, t.leaf(x), t.leaf(w), t.leaf(b));
                    return t.value(ops::mean_all(t, ops::mul(t, y, t.constant(k)))).data[0];
                };
                x.zero_grad(); w.zero_grad(); b.zero_grad();
                {
                    Tape t;
                    ValueId y = ops::dense(t, t.leaf(x), t.leaf(w), t.leaf(b));
                    t.backward(ops::mean_all(t, ops::mul(t, y, t.constant(k))));
                }
                CHECK(check_grad_fd(*target, target->grad, eval).max_rel_err < 1e-4);
                target->requires_grad = false;
            }
        }
        // conv2d and tconv2d
        for (int transposed = 0; transposed < 2; ++transposed) {
            Tensor x = random_tensor({2, 3, 5, 5}, rng);
            Tensor w = transposed ? random_tensor({3, 2, 3, 3}, rng, 0.4)
                                  : random_tensor({2, 3, 3, 3}, rng, 0.4);
            Tensor b = random_tensor({2}, rng, 0.2);
            auto make = [&](Tape& t) {
                return transposed ? ops::tconv2d(t, t.leaf(x), t.leaf(w), t.leaf(b), 2, 1)
                                  : ops::conv2d(t, t.leaf(x), t.leaf(w), t.leaf(b), 2, 1);
            };
            Tensor k;
            {
                Tape probe;
                k = random_tensor(probe.value(make(probe)).shape, rng);
            }
            for (Tensor* target : {&x, &w, &b}) {
                target->requires_grad = true;
                auto eval = [&]() {
                    Tape t;
                    return t.value(ops::mean_all(t, ops::mul(t, make(t), t.constant(k)))).data[0];
                };
                x.zero_grad(); w.zero_grad(); b.zero_grad();
                {
                    Tape t;
                    t.backward(ops::mean_all(t, ops::mul(t, make(t), t.constant(k))));
                }
                CHECK(check_grad_fd(*target, target->grad, eval).max_rel_err < 1e-4);
                target->requires_grad = false;
            }
        }
        // batch_norm (training mode, batch statistics path)
        {
            Tensor x = random_tensor({3, 2, 4, 4}, rng);
            Tensor gamma = random_tensor({2}, rng, 0.3);
            for (auto& v : gamma.data) v += 1.0;
            Tensor beta = random_tensor({2}, rng, 0.2);
            Tensor rm = Tensor::zeros({2});
            Tensor rv = Tensor::full({2}, 1.0);
            Tensor k = random_tensor({3, 2, 4, 4}, rng);
            for (Tensor* target : {&x, &gamma, &beta}) {
                target->requires_grad = true;
                auto eval = [&]() {
                    Tape t;
                    ValueId y = ops::batch_norm2d(t, t.leaf(x), t.leaf(gamma), t.leaf(beta), rm, rv,
                                                  1e-5, 0.1, true);
                    return t.value(ops::mean_all(t, ops::mul(t, y, t.constant(k)))).data[0];
                };
                x.zero_grad(); gamma.zero_grad(); beta.zero_grad();
                {
                    Tape t;
                    ValueId y = ops::batch_norm2d(t, t.leaf(x), t.leaf(gamma), t.leaf(beta), rm, rv,
                                                  1e-5, 0.1, true);
                    t.backward(ops::mean_all(t, ops::mul(t, y, t.constant(k))));
                }
                CHECK(check_grad_fd(*target, target->grad, eval).max_rel_err < 1e-4);
                target->requires_grad = false;
            }
        }
        // cross entropy with logits
        {
            Tensor logits = random_tensor({4, 5}, rng, 2.0);
            logits.requires_grad = true;
            Tensor target = Tensor::zeros({4, 5});
            for (int64_t r = 0; r < 4; ++r) {
                target.data[static_cast<size_t>(r * 5 + rng.uniform_int(5))] = 1.0;
            }
            auto eval = [&]() {
                Tape t;
                ValueId ce = ops::cross_entropy_logits(t, t.leaf(logits), t.constant(target));
                return t.value(ops::mean_all(t, ce)).data[0];
            };
            logits.zero_grad();
            {
                Tape t;
                ValueId ce = ops::cross_entropy_logits(t, t.leaf(logits), t.constant(target));
                t.backward(ops::mean_all(t, ce));
            }
            CHECK(check_grad_fd(logits, logits.grad, eval).max_rel_err < 1e-4);
        }
    }
}

TEST_CASE("layer examples: relu, leaky_relu, batch_norm") {
    Tape t;
    Tensor x = Tensor::vec({-1.0, 0.0, 2.0});
    CHECK(t.value(ops::relu(t, t.leaf(x))).data == std::vector<double>{0.0, 0.0, 2.0});

    Tensor y = Tensor::vec({-10.0, 10.0});
    CHECK(t.value(ops::leaky_relu(t, t.leaf(y), 0.2)).data == std::vector<double>{-2.0, 10.0});

    // batch [[1],[3]], gamma=1, beta=0, eps=0: mean 2, variance 1
    Tensor bn_in({2, 1, 1, 1}, {1.0, 3.0});
    Tensor gamma = Tensor::full({1}, 1.0);
    Tensor beta = Tensor::zeros({1});
    Tensor rm = Tensor::zeros({1});
    Tensor rv = Tensor::full({1}, 1.0);
    ValueId out = ops::batch_norm2d(t, t.leaf(bn_in), t.leaf(gamma), t.leaf(beta), rm, rv, 0.0, 0.1, true);
    CHECK(t.value(out).data == std::vector<double>{-1.0, 1.0});
    CHECK(rm.data[0] == doctest::Approx(0.2));   // 0.9*0 + 0.1*2
    CHECK(rv.data[0] == doctest::Approx(1.0));   // 0.9*1 + 0.1*1
}

TEST_CASE("batch_norm eval mode uses running statistics") {
    Tensor x({2, 1, 1, 1}, {1.0, 3.0});
    Tensor gamma = Tensor::full({1}, 1.0);
    Tensor beta = Tensor::zeros({1});
    Tensor rm = Tensor::full({1}, 2.0);
    Tensor rv = Tensor::full({1}, 4.0);
    Tape t;
    ValueId out = ops::batch_norm2d(t, t.leaf(x), t.leaf(gamma), t.leaf(beta), rm, rv, 0.0, 0.1, false);
    CHECK(t.value(out).data[0] == doctest::Approx(-0.5));
    CHECK(t.value(out).data[1] == doctest::Approx(0.5));
    CHECK(rm.data[0] == 2.0);  // untouched in eval mode
}

TEST_CASE("shape safety: bad graphs fail loudly, never broadcast") {
    Tape t;
    Tensor a = Tensor::vec({1.0, 2.0});
    Tensor b = Tensor::vec({1.0, 2.0, 3.0});
    CHECK_THROWS_AS(ops::add(t, t.leaf(a), t.leaf(b)), ShapeError);

    Tensor img = Tensor::zeros({1, 1, 7, 7});
    Tensor w = Tensor::zeros({1, 1, 4, 4});
    Tensor bias = Tensor::zeros({1});
    try {
        ops::conv2d(t, t.leaf(img), t.leaf(w), t.leaf(bias), 2, 1);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("kernel 4") != std::string::npos);
        CHECK(msg.find("stride 2") != std::string::npos);
    }

    Tensor x = Tensor::zeros({2, 3});
    Tensor wd = Tensor::zeros({4, 5});
    CHECK_THROWS_AS(ops::dense(t, t.leaf(x), t.leaf(wd), t.leaf(bias)), ShapeError);
}

TEST_CASE("non-finite values are caught in forward") {
    Tape t;
    Tensor x = Tensor::vec({-1.0});
    CHECK_THROWS_AS(ops::log(t, t.leaf(x)), NonFiniteError);  // log(-1) = NaN
    Tensor big = Tensor::vec({1e308});
    CHECK_THROWS_AS(ops::exp(t, t.leaf(big)), NonFiniteError);
}

TEST_CASE("determinism: identical seeds give bitwise identical passes") {
    auto run = [](uint64_t seed) {
        Rng rng(seed);
        Tensor x = random_tensor({2, 3, 6, 6}, rng);
        Tensor w = random_tensor({2, 3, 3, 3}, rng, 0.3);
        Tensor b = random_tensor({2}, rng, 0.1);
        x.requires_grad = w.requires_grad = b.requires_grad = true;
        Tape t;
        ValueId y = ops::conv2d(t, t.leaf(x), t.leaf(w), t.leaf(b), 1, 1);
        ValueId loss = ops::mean_all(t, ops::mul(t, y, y));
        const double lv = t.value(loss).data[0];
        t.backward(loss);
        std::vector<double> all;
        all.push_back(lv);
        all.insert(all.end(), x.grad.begin(), x.grad.end());
        all.insert(all.end(), w.grad.begin(), w.grad.end());
        all.insert(all.end(), b.grad.begin(), b.grad.end());
        return all;
    };
    CHECK(bitwise_equal(run(42), run(42)));
    CHECK_FALSE(bitwise_equal(run(42), run(43)));
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    ParamSet ps;
    Tensor w = Tensor::vec({1.0, -2.0});
    w.requires_grad = true;
    ps.add("w", std::move(w));
    AdamState st;
    st.cfg = {0.1, 0.5, 0.999, 1e-8};
    st.init(ps);
    adam_step(ps, {{"w", {0.0, 0.0}}}, st);
    CHECK(ps.at("w").data == std::vector<double>{1.0, -2.0});
    CHECK(st.t == 1);
}

TEST_CASE("adam: bias-corrected first step moves by about alpha") {
    ParamSet ps;
    Tensor w = Tensor::vec({0.0});
    w.requires_grad = true;
    ps.add("w", std::move(w));
    AdamState st;
    st.cfg = {0.1, 0.5, 0.999, 1e-8};
    st.init(ps);
    adam_step(ps, {{"w", {1.0}}}, st);
    // hand evaluation of the recurrences at t=1
    const double m = (1.0 - 0.5) * 1.0;
    const double v = (1.0 - 0.999) * 1.0;
    const double expected = 0.0 - 0.1 * (m / (1.0 - 0.5)) / (std::sqrt(v / (1.0 - 0.999)) + 1e-8);
    CHECK(ps.at("w").data[0] == doctest::Approx(expected).epsilon(1e-12));
    CHECK(ps.at("w").data[0] == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("adam: 100 steps descend the parabola, matching a scripted loop") {
    ParamSet ps;
    Tensor w = Tensor::vec({5.0});
    w.requires_grad = true;
    ps.add("w", std::move(w));
    AdamState st;
    st.cfg = {0.1, 0.5, 0.999, 1e-8};
    st.init(ps);
    for (int i = 0; i < 100; ++i) {
        adam_step(ps, {{"w", {2.0 * ps.at("w").data[0]}}}, st);
    }
    // independent reference loop over the same recurrences
    double rw = 5.0, rm = 0.0, rv = 0.0;
    for (int tstep = 1; tstep <= 100; ++tstep) {
        const double g = 2.0 * rw;
        rm = 0.5 * rm + (1.0 - 0.5) * g;
        rv = 0.999 * rv + (1.0 - 0.999) * (g * g);
        const double mhat = rm / (1.0 - std::pow(0.5, tstep));
        const double vhat = rv / (1.0 - std::pow(0.999, tstep));
        rw -= 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
    }
    CHECK(ps.at("w").data[0] == rw);
    CHECK(std::abs(ps.at("w").data[0]) < 5.0);
}

TEST_CASE("paramset: serialization round-trips bitwise") {
    Rng rng(7);
    ParamSet ps;
    Tensor w = random_tensor({3, 4}, rng);
    w.requires_grad = true;
    ps.add("layer.w", std::move(w));
    Tensor b = random_tensor({4}, rng);
    b.requires_grad = true;
    ps.add("layer.b", std::move(b));
    ps.add("bn.running_mean", random_tensor({4}, rng));

    std::ostringstream os(std::ios::binary);
    ps.serialize(os);
    std::istringstream is(os.str(), std::ios::binary);
    ParamSet back = ParamSet::deserialize(is);

    CHECK(back.names() == ps.names());
    CHECK(params_bitwise_equal(ps, back));
    CHECK(back.at("layer.w").requires_grad);
    CHECK_FALSE(back.at("bn.running_mean").requires_grad);
    CHECK(static_cast<int64_t>(os.str().size()) == ps.serialized_size());

    // duplicate names are rejected
    CHECK_THROWS_AS(ps.add("layer.w", Tensor::zeros({1})), Error);
}

TEST_CASE("paramset: flattening follows registration order with fixed length") {
    ParamSet ps;
    Tensor a = Tensor::vec({1.0, 2.0});
    a.requires_grad = true;
    a.grad = {0.1, 0.2};
    ps.add("a", std::move(a));
    Tensor stats = Tensor::vec({9.0});
    ps.add("bn.running_mean", std::move(stats));  // not trainable, skipped
    Tensor b = Tensor::vec({3.0});
    b.requires_grad = true;
    b.grad = {0.3};
    ps.add("b", std::move(b));

    CHECK(ps.trainable_size() == 3);
    CHECK(ps.flatten_trainable_grads() == std::vector<double>{0.1, 0.2, 0.3});
    const auto grads = ps.unflatten_trainable({1.0, 2.0, 3.0});
    CHECK(grads.at("a") == std::vector<double>{1.0, 2.0});
    CHECK(grads.at("b") == std::vector<double>{3.0});
    CHECK_THROWS_AS(ps.unflatten_trainable({1.0}), ShapeError);
}
