// lightdp: train / compress / evaluate the block-pushing diffusion policy.
//
// Subcommands:
//   gen-data   roll the scripted expert into a demonstration dataset
//   train      train the diffusion teacher on demonstrations
//   prune      gate-search + prune a teacher under the score-matching loss
//   distill    consistency-distill (optionally pruning during distillation)
//   finetune   plain post-prune fine-tuning
//   eval       closed-loop success-rate evaluation of a checkpoint
//   bench      single-threaded latency benchmark of a checkpoint
//   report     comparison table across evaluated run directories
//
// Exit codes: 0 success, 1 usage/contract error, 2 numeric/training failure.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "lightdp/harness.hpp"

namespace fs = std::filesystem;
using namespace lightdp;

namespace {

struct CommonOpts {
    std::string config_file;
    std::vector<std::string> sets;
};

RunConfig resolve_config(const CommonOpts & c) {
    RunConfig rc;
    if (!c.config_file.empty()) rc.apply_file(c.config_file);
    for (const auto & kv : c.sets) rc.apply_line(kv);
    rc.validate();
    return rc;
}

void add_common(CLI::App * cmd, CommonOpts & c) {
    cmd->add_option("--config", c.config_file, "key=value config file");
    cmd->add_option("--set", c.sets, "config override, e.g. --set net.hidden=64")->take_all();
}

fs::path out_dir(const std::string & dir) {
    fs::path root = harness::output_root(".");
    fs::path p = fs::path(dir).is_absolute() ? fs::path(dir) : root / dir;
    fs::create_directories(p);
    return p;
}

void write_text(const fs::path & p, const std::string & text) {
    std::ofstream out(p);
    if (!out) throw contract_error("cannot write " + p.string());
    out << text;
}

double wall_ms(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
}

int run(int argc, char ** argv) {
    CLI::App app{"LightDP block-pushing diffusion policy pipeline"};
    app.require_subcommand(1);

    auto * gen = app.add_subcommand("gen-data", "generate expert demonstrations");
    CommonOpts gen_c;
    int gen_episodes = -1;
    int gen_seed = -1;
    std::string gen_out = "data.ldpt";
    gen->add_option("--episodes", gen_episodes, "episode count");
    gen->add_option("--seed", gen_seed, "seed base");
    gen->add_option("--out", gen_out, "output dataset path")->required();
    add_common(gen, gen_c);

    auto * train = app.add_subcommand("train", "train the diffusion teacher");
    CommonOpts train_c;
    std::string train_data, train_out = "runs/teacher";
    train->add_option("--data", train_data, "dataset path")->required();
    train->add_option("--out-dir", train_out, "output directory");
    add_common(train, train_c);

    auto * prune = app.add_subcommand("prune", "gate-search and prune a teacher");
    CommonOpts prune_c;
    std::string prune_ckpt, prune_data, prune_out = "runs/pruned", prune_scheme;
    prune->add_option("--ckpt", prune_ckpt, "teacher checkpoint")->required();
    prune->add_option("--data", prune_data, "dataset path")->required();
    prune->add_option("--scheme", prune_scheme, "N:M scheme (defaults to config)");
    prune->add_option("--out-dir", prune_out, "output directory");
    add_common(prune, prune_c);

    auto * dist = app.add_subcommand("distill", "consistency distillation");
    CommonOpts dist_c;
    std::string dist_ckpt, dist_data, dist_out = "runs/student", dist_scheme;
    bool dist_no_prune = false;
    dist->add_option("--teacher", dist_ckpt, "teacher checkpoint")->required();
    dist->add_option("--data", dist_data, "dataset path")->required();
    dist->add_option("--scheme", dist_scheme, "N:M scheme (defaults to config)");
    dist->add_flag("--no-prune", dist_no_prune, "distill without pruning");
    dist->add_option("--out-dir", dist_out, "output directory");
    add_common(dist, dist_c);

    auto * fine = app.add_subcommand("finetune", "post-prune fine-tuning");
    CommonOpts fine_c;
    std::string fine_ckpt, fine_data, fine_out = "runs/finetuned";
    int fine_steps = 500;
    fine->add_option("--ckpt", fine_ckpt, "checkpoint")->required();
    fine->add_option("--data", fine_data, "dataset path")->required();
    fine->add_option("--steps", fine_steps, "training steps");
    fine->add_option("--out-dir", fine_out, "output directory");
    add_common(fine, fine_c);

    auto * ev = app.add_subcommand("eval", "closed-loop evaluation");
    CommonOpts ev_c;
    std::string ev_ckpt, ev_out = "runs/eval";
    int ev_episodes = -1, ev_steps = -1, ev_seed = -1;
    ev->add_option("--ckpt", ev_ckpt, "checkpoint")->required();
    ev->add_option("--episodes", ev_episodes, "episode count");
    ev->add_option("--steps", ev_steps, "sampler steps per action");
    ev->add_option("--seed", ev_seed, "evaluation seed base");
    ev->add_option("--out-dir", ev_out, "output directory");
    add_common(ev, ev_c);

    auto * bench = app.add_subcommand("bench", "latency benchmark");
    CommonOpts bench_c;
    std::string bench_ckpt, bench_out = "runs/bench";
    int bench_steps = -1, bench_trials = -1;
    bench->add_option("--ckpt", bench_ckpt, "checkpoint")->required();
    bench->add_option("--steps", bench_steps, "sampler steps per action");
    bench->add_option("--trials", bench_trials, "timing trials");
    bench->add_option("--out-dir", bench_out, "output directory");
    add_common(bench, bench_c);

    auto * rep = app.add_subcommand("report", "comparison table across runs");
    std::vector<std::string> rep_runs;
    std::string rep_teacher = "teacher", rep_out = "runs/report";
    rep->add_option("--runs", rep_runs, "run directories containing row.kv")->required();
    rep->add_option("--teacher-name", rep_teacher, "name of the baseline row");
    rep->add_option("--out-dir", rep_out, "output directory");

    CLI11_PARSE(app, argc, argv);
    const auto t0 = std::chrono::steady_clock::now();

    if (gen->parsed()) {
        RunConfig rc = resolve_config(gen_c);
        if (gen_episodes > 0) rc.data_episodes = gen_episodes;
        if (gen_seed >= 0) rc.data_seed = gen_seed;
        rc.validate();
        auto data = harness::gen_data(rc);
        data.save(gen_out);
        std::printf("wrote %s: %zu episodes, %lld windows\n", gen_out.c_str(),
                    data.episodes.size(), (long long)data.num_windows());
        return 0;
    }

    if (train->parsed()) {
        RunConfig rc = resolve_config(train_c);
        const fs::path dir = out_dir(train_out);
        write_text(dir / "config.resolved.txt", rc.serialized());
        auto data = TrajectoryDataset::load(train_data);
        MetricsLog log((dir / "metrics.log").string());
        auto net = harness::train_teacher(rc, data, &log);
        log.comment("wall_ms=" + MetricsLog::format_value(wall_ms(t0)));
        save_checkpoint((dir / "teacher.ckpt").string(), {net, EdmMode::diffusion, {}, {}});
        write_row((dir / "row.kv").string(), harness::row_for("teacher", net.cfg, rc.eval_steps));
        std::printf("teacher trained: %lld params -> %s\n", (long long)net.num_scalars(),
                    (dir / "teacher.ckpt").c_str());
        return 0;
    }

    if (prune->parsed()) {
        RunConfig rc = resolve_config(prune_c);
        if (!prune_scheme.empty()) rc.prune_scheme = prune_scheme;
        rc.validate();
        const fs::path dir = out_dir(prune_out);
        write_text(dir / "config.resolved.txt", rc.serialized());
        auto ck = load_checkpoint(prune_ckpt);
        auto data = TrajectoryDataset::load(prune_data);
        auto out = harness::prune_pretrain(rc, ck.net, data);
        const int gate_epochs = std::max(1, int(std::lround(rc.prune_snapshot_frac * rc.prune_epochs)));
        const int ft_steps = std::max(0, (rc.prune_epochs - gate_epochs) * rc.prune_steps_per_epoch);
        MetricsLog log((dir / "metrics.log").string());
        harness::finetune(rc, out.net, data, ft_steps, &log);
        log.comment("wall_ms=" + MetricsLog::format_value(wall_ms(t0)));
        save_checkpoint((dir / "pruned.ckpt").string(),
                        {out.net, EdmMode::diffusion, out.logits.logits, out.masks});
        write_text(dir / "prune_report.txt",
                   harness::prune_report_text(ck.net.cfg, out.importances, out.logits, out.masks,
                                              rc.eval_steps, rc.eval_steps));
        write_row((dir / "row.kv").string(), harness::row_for("pruned", out.net.cfg, rc.eval_steps));
        std::printf("pruned to depth %d -> %s\n", out.net.cfg.depth, (dir / "pruned.ckpt").c_str());
        return 0;
    }

    if (dist->parsed()) {
        RunConfig rc = resolve_config(dist_c);
        if (!dist_scheme.empty()) rc.prune_scheme = dist_scheme;
        rc.validate();
        const fs::path dir = out_dir(dist_out);
        write_text(dir / "config.resolved.txt", rc.serialized());
        auto teacher = load_checkpoint(dist_ckpt);
        auto data = TrajectoryDataset::load(dist_data);
        MetricsLog log((dir / "metrics.log").string());
        auto res = harness::distill_policy(rc, teacher.net, data, !dist_no_prune, &log);
        log.comment("wall_ms=" + MetricsLog::format_value(wall_ms(t0)));
        save_checkpoint((dir / "student.ckpt").string(),
                        {res.student, EdmMode::consistency,
                         dist_no_prune ? std::optional<std::vector<std::vector<double>>>{}
                                       : std::optional(res.logits.logits),
                         std::optional(res.masks)});
        if (!dist_no_prune) {
            const int k = std::max(1, teacher.net.cfg.hidden / 4);
            write_text(dir / "prune_report.txt",
                       harness::prune_report_text(teacher.net.cfg,
                                                  normalized_importances(teacher.net, k),
                                                  res.logits, res.masks, rc.eval_steps, 4));
        }
        write_row((dir / "row.kv").string(), harness::row_for("student", res.student.cfg, 4));
        std::printf("distilled student depth %d -> %s\n", res.student.cfg.depth,
                    (dir / "student.ckpt").c_str());
        return 0;
    }

    if (fine->parsed()) {
        RunConfig rc = resolve_config(fine_c);
        const fs::path dir = out_dir(fine_out);
        write_text(dir / "config.resolved.txt", rc.serialized());
        auto ck = load_checkpoint(fine_ckpt);
        auto data = TrajectoryDataset::load(fine_data);
        MetricsLog log((dir / "metrics.log").string());
        harness::finetune(rc, ck.net, data, fine_steps, &log);
        log.comment("wall_ms=" + MetricsLog::format_value(wall_ms(t0)));
        save_checkpoint((dir / "finetuned.ckpt").string(), ck);
        std::printf("finetuned %d steps -> %s\n", fine_steps, (dir / "finetuned.ckpt").c_str());
        return 0;
    }

    if (ev->parsed()) {
        RunConfig rc = resolve_config(ev_c);
        if (ev_episodes > 0) rc.eval_episodes = ev_episodes;
        if (ev_steps > 0) rc.eval_steps = ev_steps;
        if (ev_seed >= 0) rc.eval_seed = ev_seed;
        rc.validate();
        const fs::path dir = out_dir(ev_out);
        auto ck = load_checkpoint(ev_ckpt);
        auto out = harness::eval_checkpoint(rc, ck, rc.eval_episodes, rc.eval_steps,
                                            std::uint64_t(rc.eval_seed));
        std::ostringstream txt;
        txt << "checkpoint: " << ev_ckpt << "\n";
        txt << "episodes: " << rc.eval_episodes << "  sampler steps: " << rc.eval_steps << "\n";
        char buf[128];
        std::snprintf(buf, sizeof buf, "success_rate: %.4f\nmean_max_coverage: %.4f\n",
                      out.success, out.coverage);
        txt << buf;
        for (size_t i = 0; i < out.detail.episodes.size(); ++i) {
            const auto & e = out.detail.episodes[i];
            std::snprintf(buf, sizeof buf, "episode %03zu: success=%d coverage=%.4f steps=%d\n", i,
                          e.success ? 1 : 0, e.max_coverage, e.steps_used);
            txt << buf;
        }
        write_text(dir / "eval.txt", txt.str());
        ReportRow row = harness::row_for(dir.filename().string(), ck.net.cfg, rc.eval_steps);
        if (fs::exists(dir / "row.kv")) row = read_row((dir / "row.kv").string());
        row.steps = rc.eval_steps;
        row.flops_total = row.flops_encoder + i64(row.steps) * row.flops_denoiser;
        row.success = out.success;
        row.coverage = out.coverage;
        write_row((dir / "row.kv").string(), row);
        std::printf("success_rate %.4f  mean_max_coverage %.4f\n", out.success, out.coverage);
        return 0;
    }

    if (bench->parsed()) {
        RunConfig rc = resolve_config(bench_c);
        if (bench_steps > 0) rc.bench_steps = bench_steps;
        if (bench_trials > 0) rc.bench_trials = bench_trials;
        rc.validate();
        const fs::path dir = out_dir(bench_out);
        auto ck = load_checkpoint(bench_ckpt);
        const EdmCoeffs co = harness::edm_coeffs(rc, ck.mode);
        auto lat = bench_latency(ck.net, co, rc.bench_steps, rc.bench_trials);
        std::ostringstream txt;
        char buf[200];
        std::snprintf(buf, sizeof buf,
                      "steps: %d\ntrials: %d\nencoder_ms: %.5f\ndenoiser_step_ms: %.5f\n"
                      "total_ms_mean: %.4f\ntotal_ms_p95: %.4f\ndenoiser_fraction: %.4f\n",
                      lat.steps, lat.trials, lat.encoder_ms, lat.denoiser_step_ms,
                      lat.total_ms_mean, lat.total_ms_p95, lat.denoiser_fraction());
        txt << buf;
        write_text(dir / "bench.txt", txt.str());
        ReportRow row = harness::row_for(dir.filename().string(), ck.net.cfg, rc.bench_steps);
        if (fs::exists(dir / "row.kv")) row = read_row((dir / "row.kv").string());
        row.latency_ms = lat.total_ms_mean;
        write_row((dir / "row.kv").string(), row);
        std::printf("%s", txt.str().c_str());
        return 0;
    }

    if (rep->parsed()) {
        std::vector<ReportRow> rows;
        for (const auto & r : rep_runs) {
            const fs::path p = fs::path(r) / "row.kv";
            if (!fs::exists(p)) throw contract_error("report: missing " + p.string());
            ReportRow row = read_row(p.string());
            if (row.name.empty()) row.name = fs::path(r).filename().string();
            rows.push_back(row);
        }
        const fs::path dir = out_dir(rep_out);
        const std::string table = make_report(rows, rep_teacher);
        write_text(dir / "report.txt", table);
        write_text(dir / "report.csv", make_report_csv(rows, rep_teacher));
        std::printf("%s", table.c_str());
        return 0;
    }

    return 1;
}

}  // namespace

int main(int argc, char ** argv) {
    try {
        return run(argc, argv);
    } catch (const numeric_error & e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 2;
    } catch (const training_error & e) {
        std::fprintf(stderr, "training error: %s\n", e.what());
        return 2;
    } catch (const std::exception & e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
