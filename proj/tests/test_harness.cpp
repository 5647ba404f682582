#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "lightdp/harness.hpp"

using namespace lightdp;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string & path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(bool(in));
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

fs::path tmpdir() {
    auto p = fs::temp_directory_path() / "lightdp_test";
    fs::create_directories(p);
    return p;
}

RunConfig small_rc() {
    RunConfig rc;
    rc.net_depth = 2;
    rc.net_hidden = 16;
    rc.net_heads = 2;
    rc.net_horizon = 4;
    rc.prune_scheme = "1:2";
    rc.train_steps = 4;
    rc.train_batch = 4;
    rc.data_episodes = 2;
    rc.validate();
    return rc;
}

}  // namespace

TEST_CASE("runconfig: defaults valid, overrides apply, unknown keys rejected") {
    RunConfig rc;
    rc.validate();
    rc.apply_line("net.hidden = 64");
    CHECK(rc.net_hidden == 64);
    rc.apply_line("distill.mu_start=0.9");
    CHECK(rc.distill_mu_start == doctest::Approx(0.9));
    rc.apply_line("# a comment");
    rc.apply_line("");
    CHECK_THROWS_AS(rc.apply_line("nosuch.key = 1"), contract_error);
    CHECK_THROWS_AS(rc.apply_line("net.hidden = banana"), contract_error);

    auto [n, m] = rc.scheme();
    CHECK(n == 1);
    CHECK(m == 2);
    rc.prune_scheme = "3:4";
    rc.net_depth = 8;
    rc.validate();
    rc.prune_scheme = "4:3";
    CHECK_THROWS_AS(rc.validate(), contract_error);
}

TEST_CASE("runconfig serialization round-trips every field") {
    RunConfig a;
    a.net_hidden = 48;
    a.edm_sigma_max = 40.0;
    a.distill_teacher_substeps = true;
    a.prune_scheme = "1:4";
    a.net_depth = 8;
    const std::string text = a.serialized();
    RunConfig b;
    std::istringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) b.apply_line(line);
    CHECK(b.serialized() == text);
    CHECK(b.net_hidden == 48);
    CHECK(b.distill_teacher_substeps == true);
}

TEST_CASE("checkpoint round-trip is byte-identical and preserves behavior") {
    DenoiserConfig cfg;
    cfg.depth = 2;
    cfg.hidden = 16;
    cfg.heads = 2;
    cfg.action_dim = 2;
    cfg.horizon = 4;
    cfg.obs_dim = 6;
    DenoiserNet<float> net(cfg);
    Rng rng(3);
    net.init_weights(rng);

    Checkpoint ck{net.clone(), EdmMode::consistency,
                  std::vector<std::vector<double>>{{0.1, -0.2}, {0.3, 0.4}},
                  std::vector<int>{1, 0}};
    const auto dir = tmpdir();
    const std::string p1 = (dir / "a.ckpt").string();
    const std::string p2 = (dir / "b.ckpt").string();
    save_checkpoint(p1, ck);
    Checkpoint loaded = load_checkpoint(p1);
    save_checkpoint(p2, loaded);
    CHECK(slurp(p1) == slurp(p2));

    CHECK(loaded.mode == EdmMode::consistency);
    REQUIRE(loaded.gate_logits.has_value());
    CHECK((*loaded.gate_logits)[1][1] == 0.4);
    REQUIRE(loaded.masks.has_value());
    CHECK((*loaded.masks) == std::vector<int>{1, 0});

    // identical forward outputs
    std::vector<float> xv(1 * 4 * 2, 0.3f), ov(1 * 6, -0.2f);
    Tensor<float> x({1, 4, 2}, xv), obs({1, 6}, ov);
    auto a = net.forward(x, obs, {0.5f});
    auto b = loaded.net.forward(x, obs, {0.5f});
    CHECK(std::memcmp(a.data().data(), b.data().data(), a.data().size() * sizeof(float)) == 0);
}

TEST_CASE("metrics log: deterministic records, monotone steps, comment wall time") {
    const auto dir = tmpdir();
    const std::string p = (dir / "m.log").string();
    {
        MetricsLog log(p);
        log.record(0, {{"loss", 0.5}, {"lr", 1e-4}});
        log.comment("wall_ms=123.4");
        log.record(10, {{"loss", 0.25}, {"lr", 1e-4}});
        CHECK_THROWS_AS(log.record(10, {{"loss", 0.1}}), contract_error);
    }
    auto recs = read_metrics(p);
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].step == 0);
    CHECK(recs[1].values.at("loss") == doctest::Approx(0.25));
}

TEST_CASE("dataset file round-trip is byte-identical; windows pad at the end") {
    sim::PushSimConfig cfg;
    auto data = generate_dataset(cfg, 2, 7, 16);
    const auto dir = tmpdir();
    const std::string p1 = (dir / "d1.ldpt").string();
    const std::string p2 = (dir / "d2.ldpt").string();
    data.save(p1);
    auto loaded = TrajectoryDataset::load(p1);
    loaded.save(p2);
    CHECK(slurp(p1) == slurp(p2));
    CHECK(loaded.episodes.size() == 2);
    CHECK(loaded.obs_dim == 40);

    // last window: chunk repeats the final action
    const auto & ep = loaded.episodes[0];
    std::vector<float> obs, chunk;
    loaded.window(ep.length - 1, obs, chunk);
    for (int t = 0; t < 16; ++t) {
        CHECK(chunk[size_t(2 * t)] == ep.actions[size_t(2 * (ep.length - 1))]);
        CHECK(chunk[size_t(2 * t + 1)] == ep.actions[size_t(2 * (ep.length - 1) + 1)]);
    }
}

TEST_CASE("dataset generation is reproducible byte-for-byte") {
    sim::PushSimConfig cfg;
    const auto dir = tmpdir();
    const std::string p1 = (dir / "g1.ldpt").string();
    const std::string p2 = (dir / "g2.ldpt").string();
    generate_dataset(cfg, 3, 11, 16).save(p1);
    generate_dataset(cfg, 3, 11, 16).save(p2);
    CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("report rows: identity enforced, ratios computed, pending rendered") {
    ReportRow teacher;
    teacher.name = "teacher";
    teacher.depth = 8;
    teacher.steps = 100;
    teacher.params = 1000;
    teacher.flops_encoder = 10;
    teacher.flops_denoiser = 5;
    teacher.flops_total = 10 + 100 * 5;
    teacher.latency_ms = 200.0;
    teacher.success = 0.9;

    ReportRow student = teacher;
    student.name = "student";
    student.depth = 2;
    student.steps = 4;
    student.flops_denoiser = 5 / 4;
    student.flops_denoiser = 1;
    student.flops_total = 10 + 4 * 1;
    student.latency_ms = -1.0;  // pending
    student.success = -1.0;

    auto text = make_report({teacher, student}, "teacher");
    CHECK(text.find("pending") != std::string::npos);
    CHECK(text.find("teacher") != std::string::npos);

    ReportRow broken = teacher;
    broken.name = "broken";
    broken.flops_total = 42;
    CHECK_THROWS_AS(make_report({teacher, broken}, "teacher"), contract_error);

    const auto dir = tmpdir();
    const std::string p = (dir / "row.kv").string();
    write_row(p, teacher);
    auto round = read_row(p);
    CHECK(round.name == teacher.name);
    CHECK(round.flops_total == teacher.flops_total);
    CHECK(round.success == doctest::Approx(teacher.success));
}

TEST_CASE("net policy sampling is deterministic per seed") {
    RunConfig rc = small_rc();
    const DenoiserConfig cfg = harness::net_config(rc);
    DenoiserNet<float> net(cfg);
    Rng rng(5);
    net.init_weights(rng);
    harness::NetPolicy pol(net, harness::edm_coeffs(rc, EdmMode::diffusion), 8);
    sim::Observation obs(size_t(cfg.obs_dim), 0.1f);
    Rng r1(9), r2(9);
    auto a = pol.act(obs, r1);
    auto b = pol.act(obs, r2);
    CHECK(a == b);
}

TEST_CASE("bench_latency: contract and structure") {
    DenoiserConfig cfg;
    cfg.depth = 2;
    cfg.hidden = 16;
    cfg.heads = 2;
    cfg.action_dim = 2;
    cfg.horizon = 4;
    cfg.obs_dim = 6;
    DenoiserNet<float> net(cfg);
    Rng rng(7);
    net.init_weights(rng);
    EdmCoeffs co;
    CHECK_THROWS_AS(bench_latency(net, co, 4, 5), contract_error);
    auto rep = bench_latency(net, co, 4, 10);
    CHECK(rep.total_ms_mean > 0.0);
    CHECK(rep.denoiser_step_ms > 0.0);
    CHECK(rep.encoder_ms > 0.0);
    CHECK(rep.denoiser_fraction() > 0.0);
    CHECK(rep.denoiser_fraction() <= 1.0);
    CHECK(rep.total_ms_p95 >= rep.total_ms_mean * 0.5);
}

TEST_CASE("training a tiny teacher twice yields identical checkpoints and metrics") {
    RunConfig rc = small_rc();
    sim::PushSimConfig sc = harness::sim_config(rc);
    auto data = generate_dataset(sc, 2, 5, rc.net_horizon);

    const auto dir = tmpdir();
    auto run_once = [&](const std::string & tag) {
        const std::string mpath = (dir / (tag + ".log")).string();
        MetricsLog log(mpath);
        auto net = harness::train_teacher(rc, data, &log);
        log.close();
        const std::string cpath = (dir / (tag + ".ckpt")).string();
        save_checkpoint(cpath, {net, EdmMode::diffusion, {}, {}});
        return std::pair(slurp(cpath), slurp(mpath));
    };
    auto [ck1, m1] = run_once("r1");
    auto [ck2, m2] = run_once("r2");
    CHECK(ck1 == ck2);
    CHECK(m1 == m2);
}
