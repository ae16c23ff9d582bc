#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <thread>

#include "dpig/distributed.hpp"
#include "testutil.hpp"

using namespace dpig;
using namespace testutil;

namespace {

DatasetShard tiny_shard(int64_t n, uint64_t seed, int64_t shard_index = 0,
                        uint64_t parent = 0x1234) {
    DatasetShard shard;
    Rng rng(seed);
    shard.images = Tensor::zeros({n, 1, 8, 8});
    for (auto& v : shard.images.data) v = std::tanh(rng.normal());
    shard.source = "test";
    shard.shard_index = shard_index;
    shard.parent_fingerprint = parent;
    shard.indices.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        shard.indices[static_cast<size_t>(i)] = shard_index * n + i;
    }
    return shard;
}

TrainConfig dist_cfg(const LatentSpec& spec, const Architecture& arch, uint64_t seed,
                     int64_t m = 4, int64_t shard_n = 8) {
    TrainConfig tc;
    tc.privacy = PrivacyParams::create(8.0, 1e-5, 1.0, m, shard_n, 1);
    tc.latent = spec;
    tc.arch = arch;
    tc.epochs = 1;
    tc.learning_rate = 1e-3;
    tc.seed = seed;
    return tc;
}

WireMessage sample_message(Rng& rng) {
    WireMessage msg;
    msg.type = static_cast<MsgType>(1 + rng.uniform_int(6));
    msg.client_id = static_cast<uint32_t>(rng.next_u64());
    msg.round = static_cast<uint32_t>(rng.next_u64());
    msg.step = static_cast<uint32_t>(rng.next_u64());
    const int64_t rank = 1 + rng.uniform_int(4);
    std::vector<int64_t> shape;
    for (int64_t r = 0; r < rank; ++r) shape.push_back(1 + rng.uniform_int(4));
    Tensor payload = Tensor::zeros(shape);
    for (auto& v : payload.data) v = rng.normal();
    msg.payload = std::move(payload);
    return msg;
}

}  // namespace

TEST_CASE("wire: round-trip of every message type") {
    for (uint8_t t = 1; t <= 6; ++t) {
        WireMessage msg = WireMessage::make(static_cast<MsgType>(t), 3, 2, 1,
                                            Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
        CHECK(wire_equal(decode_message(encode_message(msg)), msg));
    }
}

TEST_CASE("wire: fuzz round-trip of 1000 random frames") {
    Rng rng(2024);
    for (int i = 0; i < 1000; ++i) {
        const WireMessage msg = sample_message(rng);
        CHECK(wire_equal(decode_message(encode_message(msg)), msg));
    }
}

TEST_CASE("wire: all five negative cases carry distinct codes") {
    const WireMessage msg =
        WireMessage::make(MsgType::features_fwd, 1, 1, 1, Tensor({2, 2}, {1, 2, 3, 4}));
    const std::vector<uint8_t> good = encode_message(msg);

    auto code_of = [](const std::vector<uint8_t>& bytes) {
        try {
            decode_message(bytes);
            return ProtoCode::internal;
        } catch (const ProtocolError& e) {
            return e.code;
        }
    };

    std::vector<uint8_t> bad_magic = good;
    bad_magic[0] = 'X';
    CHECK(code_of(bad_magic) == ProtoCode::bad_magic);

    std::vector<uint8_t> truncated(good.begin(), good.begin() + 10);
    CHECK(code_of(truncated) == ProtoCode::truncated);
    std::vector<uint8_t> cut_payload(good.begin(), good.end() - 5);
    CHECK(code_of(cut_payload) == ProtoCode::truncated);

    std::vector<uint8_t> mismatched = good;
    mismatched[17] += 8;  // payload_length no longer matches the container
    mismatched.insert(mismatched.end(), 8, 0);
    CHECK(code_of(mismatched) == ProtoCode::length_mismatch);

    std::vector<uint8_t> unknown = good;
    unknown[4] = 99;
    CHECK(code_of(unknown) == ProtoCode::unknown_type);

    std::vector<uint8_t> trailing = good;
    trailing.push_back(0);
    CHECK(code_of(trailing) == ProtoCode::trailing_garbage);
}

TEST_CASE("q service: forward purity, busy, stale ids, update counting") {
    const LatentSpec spec = tiny_latent();
    const Architecture arch = Architecture::tiny(spec);
    ParamSet theta_q;
    Rng qrng(derive_seed(3, seed_tag::q_network, 1));
    init_q(arch, spec, theta_q, qrng);
    QService service(arch, spec, theta_q, {1e-3, 0.5, 0.999, 1e-8});

    const auto tap = arch.tap_shape();
    Rng rng(4);
    Tensor features = random_tensor({2, tap[0], tap[1], tap[2]}, rng, 0.5);

    auto send = [&](const WireMessage& m) { return decode_message(service.handle_frame(encode_message(m))); };

    // two identical forwards with no interleaved update agree bitwise
    const WireMessage fwd = WireMessage::make(MsgType::features_fwd, 1, 1, 1, features);
    const WireMessage out1 = send(fwd);
    REQUIRE(out1.type == MsgType::q_output);
    const WireMessage out2 = send(fwd);
    REQUIRE(out2.type == MsgType::q_output);
    CHECK(bitwise_equal(out1.payload.data, out2.payload.data));

    // another client mid-exchange is refused
    const WireMessage intruder = WireMessage::make(MsgType::features_fwd, 2, 1, 1, features);
    const WireMessage busy = send(intruder);
    REQUIRE(busy.type == MsgType::error);
    CHECK(static_cast<int>(busy.payload.data[0]) == static_cast<int>(ProtoCode::busy));

    // grad with stale step ids is rejected
    QOutput zero_up = unpack_qoutput(spec, out2.payload);
    for (auto& lg : zero_up.logits) std::fill(lg.data.begin(), lg.data.end(), 0.0);
    std::fill(zero_up.mean.data.begin(), zero_up.mean.data.end(), 0.0);
    std::fill(zero_up.variance.data.begin(), zero_up.variance.data.end(), 0.0);
    const WireMessage stale = WireMessage::make(MsgType::grad_bwd, 1, 1, 9,
                                                pack_qoutput(spec, zero_up));
    const WireMessage rej = send(stale);
    REQUIRE(rej.type == MsgType::error);
    CHECK(static_cast<int>(rej.payload.data[0]) == static_cast<int>(ProtoCode::stale_ids));

    // zero upstream grads: theta_q unchanged, adam t advanced, zero feature grads
    const std::vector<double> before = theta_q.at("conv1.w").data;
    const WireMessage good = WireMessage::make(MsgType::grad_bwd, 1, 1, 1,
                                               pack_qoutput(spec, zero_up));
    const WireMessage fg = send(good);
    REQUIRE(fg.type == MsgType::feature_grad);
    for (double v : fg.payload.data) CHECK(v == 0.0);
    CHECK(bitwise_equal(theta_q.at("conv1.w").data, before));
    CHECK(service.core().adam().t == 1);
    CHECK(service.update_count() == 1);

    // backward without a pending forward
    const WireMessage orphan = send(good);
    REQUIRE(orphan.type == MsgType::error);
    CHECK(static_cast<int>(orphan.payload.data[0]) == static_cast<int>(ProtoCode::no_pending_forward));

    // wrong tap shape
    Tensor bad_features = random_tensor({2, tap[0] + 1, tap[1], tap[2]}, rng);
    const WireMessage shp = send(WireMessage::make(MsgType::features_fwd, 1, 1, 2, bad_features));
    REQUIRE(shp.type == MsgType::error);
    CHECK(static_cast<int>(shp.payload.data[0]) == static_cast<int>(ProtoCode::shape_mismatch));
}

TEST_CASE("split execution equals the monolithic tape bitwise") {
    const LatentSpec spec = tiny_latent();
    const Architecture arch = Architecture::tiny(spec);
    for (uint64_t seed = 0; seed < 10; ++seed) {
        GanTriple mono = GanTriple::create(arch, spec, seed);
        GanTriple split = GanTriple::create(arch, spec, seed);
        Rng rng(seed + 500);
        const auto codes = sample_codes(spec, 3, rng);
        const double lambda = 1.0;

        // monolithic: one tape end to end
        mono.g.zero_grads();
        mono.d.zero_grads();
        mono.q.zero_grads();
        monolithic_g_phase(mono, codes, lambda, true);

        // split: client tape + service tape over the in-process wire
        QService service(arch, spec, split.q, {1e-3, 0.5, 0.999, 1e-8});
        DirectTransport transport([&](const std::vector<uint8_t>& f) { return service.handle_frame(f); });
        RemoteQChannel channel(transport, 1, spec, 1);

        Tape ct;
        ValueId input = ct.constant(codes_to_input(spec, codes));
        ValueId fakes = generator_forward(ct, arch, split.g, input, true);
        DiscNodes dn = discriminator_forward(ct, arch, split.d, fakes, true);
        QOutput qout = channel.forward(ct.value(dn.features));

        Tape mt;
        QNodes leafq;
        for (auto& lg : qout.logits) {
            lg.requires_grad = true;
            leafq.logits.push_back(mt.leaf(lg));
        }
        qout.mean.requires_grad = true;
        leafq.mean = mt.leaf(qout.mean);
        qout.variance.requires_grad = true;
        leafq.variance = mt.leaf(qout.variance);
        ValueId qn = q_nll(mt, spec, codes, leafq);
        mt.backward(info_objective(mt, qn, lambda));
        QOutput upstream;
        for (auto& lg : qout.logits) upstream.logits.push_back(Tensor(lg.shape, lg.grad));
        upstream.mean = Tensor(qout.mean.shape, qout.mean.grad);
        upstream.variance = Tensor(qout.variance.shape, qout.variance.grad);

        ValueId gadv = g_adv_loss(ct, dn.probs);
        Tensor fgrads = channel.backward(upstream);
        split.g.zero_grads();
        split.d.zero_grads();
        ct.backward_from({gadv, dn.features}, {{1.0}, fgrads.data});

        for (const auto& name : mono.g.names()) {
            if (!mono.g.at(name).requires_grad) continue;
            CHECK(bitwise_equal(mono.g.at(name).grad, split.g.at(name).grad));
        }
        // service applied its adam update from exactly the monolithic gradients;
        // rebuild what adam would do to the monolithic copy and compare
        AdamState st;
        st.cfg = {1e-3, 0.5, 0.999, 1e-8};
        st.init(mono.q);
        std::map<std::string, std::vector<double>> grads;
        for (const auto& name : mono.q.names()) {
            if (mono.q.at(name).requires_grad) grads[name] = mono.q.at(name).grad;
        }
        adam_step(mono.q, grads, st);
        CHECK(params_bitwise_equal(mono.q, split.q));
    }
}

TEST_CASE("run_rounds: N=1 distributed equals the single-client trainer bitwise") {
    const LatentSpec spec = tiny_latent();
    const Architecture arch = Architecture::tiny(spec);
    const uint64_t seed = 31;

    // single-client: local channel, 6 steps (3 epochs x 2 batches)
    GanTriple local = GanTriple::create(arch, spec, seed);
    TrainConfig tc = dist_cfg(spec, arch, seed);
    tc.epochs = 3;
    QCore qcore(arch, spec, local.q, tc.adam());
    LocalQChannel lchan(qcore);
    DatasetShard shard = tiny_shard(8, 70);
    Trainer trainer(tc, local.g, local.d, shard);
    trainer.train(lchan);

    // distributed N=1: same seeds, 6 rounds x 1 step over the wire
    ParamSet theta_q;
    Rng qrng(derive_seed(seed, seed_tag::q_network, 1));
    init_q(arch, spec, theta_q, qrng);
    QService service(arch, spec, theta_q, tc.adam());
    std::vector<std::unique_ptr<Client>> clients;
    clients.push_back(Client::create(1, tc, tiny_shard(8, 70)));
    ChannelFactory factory = [&](uint32_t id) {
        auto transport = std::make_unique<DirectTransport>(
            [&service](const std::vector<uint8_t>& f) { return service.handle_frame(f); });
        return std::make_unique<RemoteQChannel>(std::move(transport), id, spec);
    };
    run_rounds(clients, 6, 1, factory);

    CHECK(service.update_count() == 6);
    CHECK(params_bitwise_equal(local.g, clients[0]->g));
    CHECK(params_bitwise_equal(local.d, clients[0]->d));
    CHECK(params_bitwise_equal(local.q, theta_q));
}

TEST_CASE("run_rounds: order, counting, R=0, disjointness enforcement") {
    const LatentSpec spec = tiny_latent();
    const Architecture arch = Architecture::tiny(spec);
    const TrainConfig tc = dist_cfg(spec, arch, 8);

    ParamSet theta_q;
    Rng qrng(derive_seed(8ull, seed_tag::q_network, 1));
    init_q(arch, spec, theta_q, qrng);
    QService service(arch, spec, theta_q, tc.adam());
    ChannelFactory factory = [&](uint32_t id) {
        auto transport = std::make_unique<DirectTransport>(
            [&service](const std::vector<uint8_t>& f) { return service.handle_frame(f); });
        return std::make_unique<RemoteQChannel>(std::move(transport), id, spec);
    };

    std::vector<std::unique_ptr<Client>> clients;
    for (uint32_t i = 1; i <= 3; ++i) clients.push_back(Client::create(i, tc, tiny_shard(8, 70 + i, i)));

    const uint64_t fp_before = clients[0]->g.fingerprint();
    run_rounds(clients, 0, 2, factory);
    CHECK(clients[0]->g.fingerprint() == fp_before);  // R=0 leaves everything untouched

    run_rounds(clients, 2, 2, factory);
    CHECK(service.update_count() == 3 * 2 * 2);
    const std::vector<uint32_t> expect{1, 1, 2, 2, 3, 3, 1, 1, 2, 2, 3, 3};
    CHECK(service.served_sequence() == expect);

    // overlapping shards are refused up front
    std::vector<std::unique_ptr<Client>> overlapping;
    overlapping.push_back(Client::create(1, tc, tiny_shard(8, 70, 0)));
    overlapping.push_back(Client::create(2, tc, tiny_shard(8, 71, 0)));  // same index range
    CHECK_THROWS_AS(run_rounds(overlapping, 1, 1, factory), ConfigError);
}

TEST_CASE("socket transport reproduces the in-process session") {
    const LatentSpec spec = tiny_latent();
    const Architecture arch = Architecture::tiny(spec);
    const uint64_t seed = 12;
    const TrainConfig tc = dist_cfg(spec, arch, seed);

    auto run_with = [&](bool socket) {
        ParamSet theta_q;
        Rng qrng(derive_seed(seed, seed_tag::q_network, 1));
        init_q(arch, spec, theta_q, qrng);
        QService service(arch, spec, theta_q, tc.adam());
        std::vector<std::unique_ptr<Client>> clients;
        for (uint32_t i = 1; i <= 2; ++i) clients.push_back(Client::create(i, tc, tiny_shard(8, 70 + i, i)));
        int64_t updates = 0;
        if (!socket) {
            ChannelFactory factory = [&](uint32_t id) {
                auto transport = std::make_unique<DirectTransport>(
                    [&service](const std::vector<uint8_t>& f) { return service.handle_frame(f); });
                return std::make_unique<RemoteQChannel>(std::move(transport), id, spec);
            };
            run_rounds(clients, 2, 1, factory);
            updates = service.update_count();
        } else {
            SocketServer server("127.0.0.1", 0);
            std::thread th([&] {
                server.run([&service](const std::vector<uint8_t>& f) { return service.handle_frame(f); });
            });
            ChannelFactory factory = [&](uint32_t id) {
                auto transport = SocketTransport::connect("127.0.0.1", server.port());
                return std::make_unique<RemoteQChannel>(std::move(transport), id, spec);
            };
            run_rounds(clients, 2, 1, factory);
            updates = service.update_count();
            server.stop();
            th.join();
        }
        return std::make_pair(updates, theta_q.fingerprint());
    };

    const auto [inproc_updates, inproc_fp] = run_with(false);
    const auto [socket_updates, socket_fp] = run_with(true);
    CHECK(inproc_updates == socket_updates);
    CHECK(inproc_fp == socket_fp);
}

TEST_CASE("parameter confinement: no parameter container crosses the wire") {
    const LatentSpec spec = tiny_latent();
    const Architecture arch = Architecture::tiny(spec);
    const TrainConfig tc = dist_cfg(spec, arch, 9);

    ParamSet theta_q;
    Rng qrng(derive_seed(9ull, seed_tag::q_network, 1));
    init_q(arch, spec, theta_q, qrng);
    QService service(arch, spec, theta_q, tc.adam());
    service.set_record_bytes(true);
    ChannelFactory factory = [&](uint32_t id) {
        auto transport = std::make_unique<DirectTransport>(
            [&service](const std::vector<uint8_t>& f) { return service.handle_frame(f); });
        return std::make_unique<RemoteQChannel>(std::move(transport), id, spec);
    };
    std::vector<std::unique_ptr<Client>> clients;
    clients.push_back(Client::create(1, tc, tiny_shard(8, 70)));
    run_rounds(clients, 3, 1, factory);

    CHECK(service.session_bytes().size() > 1000);
    CHECK(count_paramset_magic(service.session_bytes()) == 0);
    // positive control: a serialized parameter set does contain the magic
    CHECK(count_paramset_magic(theta_q.serialized_bytes()) >= 1);
}

TEST_CASE("measure_traffic: shape arithmetic, FL baseline, linearity in batch") {
    const LatentSpec spec = tiny_latent();
    const Architecture arch = Architecture::tiny(spec);
    const auto tap = arch.tap_shape();

    auto run_session = [&](int64_t m, int64_t steps) {
        TrainConfig tc = dist_cfg(spec, arch, 10, m, 8);
        ParamSet theta_q;
        Rng qrng(derive_seed(10ull, seed_tag::q_network, 1));
        init_q(arch, spec, theta_q, qrng);
        QService service(arch, spec, theta_q, tc.adam());
        ChannelFactory factory = [&](uint32_t id) {
            auto transport = std::make_unique<DirectTransport>(
                [&service](const std::vector<uint8_t>& f) { return service.handle_frame(f); });
            return std::make_unique<RemoteQChannel>(std::move(transport), id, spec);
        };
        std::vector<std::unique_ptr<Client>> clients;
        clients.push_back(Client::create(1, tc, tiny_shard(8, 70)));
        run_rounds(clients, steps, 1, factory);
        const int64_t full = clients[0]->g.serialized_size() + clients[0]->d.serialized_size() +
                             theta_q.serialized_size();
        return std::make_pair(measure_traffic(service.traffic(), full), service.traffic());
    };

    const int64_t header = static_cast<int64_t>(kFrameHeaderSize);
    const int64_t tap_vol = tap[0] * tap[1] * tap[2];
    auto expect_per_round = [&](int64_t m) {
        // each direction per round: one activation-sized frame, one
        // qoutput-sized frame, one round_done
        const int64_t feat_payload = 4 + 8 * 4 + 8 * m * tap_vol;
        const int64_t qout_payload = 4 + 8 * 2 + 8 * m * spec.q_output_dim();
        const int64_t done_payload = 4 + 8 * 1 + 8 * 1;
        return (header + feat_payload) + (header + qout_payload) + (header + done_payload);
    };

    const auto [s4, log4] = run_session(4, 2);
    CHECK(s4.steps == 2);
    CHECK(s4.bytes_c2s == 2 * expect_per_round(4));
    CHECK(s4.bytes_s2c == 2 * expect_per_round(4));
    CHECK(s4.bytes_per_step_total() < static_cast<double>(s4.full_model_bytes));
    (void)log4;

    // doubling the batch doubles exactly the per-example payload bytes
    const auto [s8, log8] = run_session(8, 2);
    (void)log8;
    CHECK(s8.bytes_c2s == 2 * expect_per_round(8));
    CHECK(s8.bytes_c2s - s4.bytes_c2s == 2 * 8 * 4 * (tap_vol + spec.q_output_dim()));

    // the rendered session log lines carry direction, type and size
    const std::string rendered = render_traffic_log(log4);
    CHECK(rendered.find("dir=c2s type=FEATURES_FWD") != std::string::npos);
    CHECK(rendered.find("dir=s2c type=FEATURE_GRAD") != std::string::npos);
}

TEST_CASE("remote q forward equals a local q_forward on a copied theta_q bitwise") {
    const LatentSpec spec = tiny_latent();
    const Architecture arch = Architecture::tiny(spec);
    ParamSet theta_q, theta_copy;
    Rng qrng(derive_seed(21ull, seed_tag::q_network, 1));
    init_q(arch, spec, theta_q, qrng);
    Rng qrng2(derive_seed(21ull, seed_tag::q_network, 1));
    init_q(arch, spec, theta_copy, qrng2);

    QService service(arch, spec, theta_q, {1e-3, 0.5, 0.999, 1e-8});
    DirectTransport transport([&](const std::vector<uint8_t>& f) { return service.handle_frame(f); });
    RemoteQChannel channel(transport, 1, spec, 1);

    const auto tap = arch.tap_shape();
    Rng rng(22);
    Tensor features = random_tensor({3, tap[0], tap[1], tap[2]}, rng, 0.4);
    const QOutput remote = channel.forward(features);

    Tape t;
    Tensor fcopy = features;
    QNodes qn = q_forward(t, arch, spec, theta_copy, t.leaf(fcopy), true);
    const QOutput local = qnodes_values(t, qn);

    CHECK(bitwise_equal(remote.mean.data, local.mean.data));
    CHECK(bitwise_equal(remote.variance.data, local.variance.data));
    for (size_t j = 0; j < remote.logits.size(); ++j) {
        CHECK(bitwise_equal(remote.logits[j].data, local.logits[j].data));
    }
}
