// evt: command-line front end for the event-stream transformer pipeline.
//
//   evt synth   generate synthetic gesture streams (EVT1 or CSV)
//   evt repr    per-window patch statistics for one stream
//   evt train   train on a directory of labeled streams, write a checkpoint
//   evt infer   classify streams with a checkpoint
//   evt bench   analytic FLOPs and per-window latency
//   evt stats   activated-patch distribution over a dataset
//
// Exit codes: 0 success, 1 usage error, 2 data error.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <omp.h>

#include "CLI11.hpp"

#include "evt/backbone.hpp"
#include "evt/checkpoint.hpp"
#include "evt/config.hpp"
#include "evt/error.hpp"
#include "evt/event_io.hpp"
#include "evt/perf.hpp"
#include "evt/representation.hpp"
#include "evt/rng.hpp"
#include "evt/synth.hpp"
#include "evt/training.hpp"

namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigFlags {
    std::string config_path;
    std::vector<std::string> overrides;

    void attach(CLI::App* app) {
        app->add_option("--config", config_path, "JSON run config (repr/model/train sections)");
        app->add_option("--set", overrides, "Override a config field: section.key=value (repeatable)");
    }

    evt::RunConfig load() const {
        evt::RunConfig cfg = config_path.empty() ? evt::RunConfig{} : evt::load_run_config(config_path);
        for (const auto& o : overrides) evt::apply_override(cfg, o);
        return cfg;
    }
};

struct GeometryFlags {
    std::uint16_t width = 128;
    std::uint16_t height = 128;

    void attach(CLI::App* app) {
        app->add_option("--width", width, "Sensor width for CSV input")->capture_default_str();
        app->add_option("--height", height, "Sensor height for CSV input")->capture_default_str();
    }
};

std::optional<std::int32_t> label_from_name(const fs::path& p) {
    static const std::regex pattern(R"(^c(\d+)_.*)");
    std::smatch m;
    const std::string name = p.filename().string();
    if (std::regex_match(name, m, pattern)) return std::stoi(m[1]);
    return std::nullopt;
}

evt::EventStream load_any(const fs::path& path, const GeometryFlags& geo) {
    const auto format = evt::format_from_path(path);
    evt::CsvGeometry g{geo.width, geo.height, label_from_name(path)};
    return evt::read_stream(path, format, g);
}

std::vector<fs::path> dataset_files(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw evt::DataError("not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const auto ext = entry.path().extension();
        if (entry.is_regular_file() && (ext == ".evt" || ext == ".csv")) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw evt::DataError("no .evt or .csv streams in " + dir.string());
    return files;
}

std::vector<evt::EventStream> load_dataset(const fs::path& dir, const GeometryFlags& geo) {
    std::vector<evt::EventStream> out;
    for (const auto& f : dataset_files(dir)) out.push_back(load_any(f, geo));
    return out;
}

std::string fmt(double v, int precision = 6) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
    return buf;
}

// ---- synth -------------------------------------------------------------------

struct SynthArgs {
    int class_id = 0;
    std::uint64_t duration = 500'000;
    std::uint16_t width = 128;
    std::uint16_t height = 128;
    double signal_rate = 1.0;
    double noise_rate = 0.0;
    std::string out;
    std::string format;
    std::string dataset_dir;
    int classes = 4;
    int per_class = 0;
};

evt::StreamFormat pick_format(const std::string& flag, const fs::path& path) {
    if (flag.empty()) return evt::format_from_path(path);
    if (flag == "binary" || flag == "evt1") return evt::StreamFormat::binary;
    if (flag == "csv") return evt::StreamFormat::csv;
    throw UsageError("unknown format '" + flag + "' (binary|csv)");
}

int run_synth(const SynthArgs& a, std::uint64_t seed) {
    evt::SynthSpec spec;
    spec.duration = a.duration;
    spec.width = a.width;
    spec.height = a.height;
    spec.signal_rate = a.signal_rate;
    spec.noise_rate = a.noise_rate;

    if (!a.dataset_dir.empty()) {
        if (a.per_class < 1) throw UsageError("--dataset-dir needs --per-class >= 1");
        fs::create_directories(a.dataset_dir);
        const auto format = a.format.empty() ? evt::StreamFormat::binary : pick_format(a.format, "");
        const char* ext = format == evt::StreamFormat::csv ? ".csv" : ".evt";
        for (int c = 0; c < a.classes; ++c) {
            for (int i = 0; i < a.per_class; ++i) {
                spec.class_id = c;
                spec.seed = evt::Rng::mix(seed, static_cast<std::uint64_t>(c) * 1'000'003u + i);
                const auto stream = evt::generate_synthetic(spec);
                char name[64];
                std::snprintf(name, sizeof(name), "c%d_%05d%s", c, i, ext);
                evt::write_stream(stream, fs::path(a.dataset_dir) / name, format);
            }
        }
        std::cout << "synth dataset=" << a.dataset_dir << " classes=" << a.classes
                  << " per_class=" << a.per_class << " seed=" << seed << '\n';
        return 0;
    }

    if (a.out.empty()) throw UsageError("synth needs --out or --dataset-dir");
    spec.class_id = a.class_id;
    spec.seed = seed;
    const auto stream = evt::generate_synthetic(spec);
    evt::write_stream(stream, a.out, pick_format(a.format, a.out));
    std::cout << "synth out=" << a.out << " class=" << a.class_id << " events=" << stream.size()
              << " seed=" << seed << '\n';
    return 0;
}

// ---- repr --------------------------------------------------------------------

int run_repr(const std::string& path, const GeometryFlags& geo, const ConfigFlags& cf, bool ascii,
             const std::string& tokens_csv) {
    const auto cfg = cf.load();
    const auto stream = load_any(path, geo);
    const int rows = cfg.repr.grid_rows(stream.height());
    const int cols = cfg.repr.grid_cols(stream.width());
    std::cout << "grid rows=" << rows << " cols=" << cols
              << " discarded_rows=" << stream.height() - rows * cfg.repr.patch_size
              << " discarded_cols=" << stream.width() - cols * cfg.repr.patch_size
              << " threshold_pixels=" << cfg.repr.activation_threshold() << '\n';

    std::ofstream csv;
    if (!tokens_csv.empty()) {
        csv.open(tokens_csv, std::ios::trunc);
        if (!csv) throw std::runtime_error("cannot write " + tokens_csv);
        csv << "window,grid_row,grid_col";
        for (int i = 0; i < cfg.repr.token_length(); ++i) csv << ",v" << i;
        csv << '\n';
    }

    evt::WindowIterator it(stream, cfg.repr);
    std::size_t index = 0;
    while (auto w = it.next()) {
        std::cout << "window index=" << index << " start=" << w->window_start << " end=" << w->window_end
                  << " span_us=" << w->window_end - w->window_start << " T=" << w->tokens.size()
                  << " exhausted=" << (w->exhausted ? 1 : 0) << '\n';
        if (ascii) {
            std::vector<std::string> grid(rows, std::string(cols, '.'));
            for (const auto& t : w->tokens) grid[t.grid_row][t.grid_col] = '#';
            for (const auto& line : grid) std::cout << "  " << line << '\n';
        }
        if (csv.is_open()) {
            for (const auto& t : w->tokens) {
                csv << index << ',' << t.grid_row << ',' << t.grid_col;
                for (double v : t.values) csv << ',' << v;
                csv << '\n';
            }
        }
        ++index;
    }
    std::cout << "windows=" << index << '\n';
    return 0;
}

// ---- train -------------------------------------------------------------------

struct TrainArgs {
    std::string data;
    std::string test_data;
    std::string out;
    std::string metrics;
};

int run_train(const TrainArgs& a, const GeometryFlags& geo, const ConfigFlags& cf,
              std::optional<std::uint64_t> seed, bool deterministic) {
    evt::RunConfig cfg = cf.load();
    if (seed) cfg.train.seed = *seed;
    if (deterministic) cfg.train.deterministic = true;
    if (a.out.empty()) throw UsageError("train needs --out");

    const auto train_streams = load_dataset(a.data, geo);
    std::vector<evt::EventStream> test_streams;
    if (!a.test_data.empty()) test_streams = load_dataset(a.test_data, geo);

    const auto& first = train_streams.front();
    for (const auto& s : train_streams) {
        if (s.width() != first.width() || s.height() != first.height()) {
            throw evt::DataError("training streams have mixed sensor geometry");
        }
    }
    int max_label = 0;
    for (const auto& s : train_streams) {
        if (!s.label()) throw evt::DataError("unlabeled stream in training data");
        max_label = std::max(max_label, *s.label());
    }
    cfg.model.grid_h = cfg.repr.grid_rows(first.height());
    cfg.model.grid_w = cfg.repr.grid_cols(first.width());
    cfg.model.token_in = cfg.repr.token_length();
    cfg.model.num_classes = std::max(cfg.model.num_classes, max_label + 1);
    cfg.model.validate();

    const fs::path out(a.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    const fs::path echo = out.parent_path() / (out.stem().string() + ".config.json");
    evt::save_run_config(cfg, echo);
    std::cout << "config echo=" << echo.string() << '\n';

    const auto train_samples = evt::prepare_samples(train_streams, cfg.repr);
    const auto test_samples = evt::prepare_samples(test_streams, cfg.repr);
    std::cout << "data train=" << train_samples.size() << " test=" << test_samples.size()
              << " classes=" << cfg.model.num_classes << '\n';

    std::ofstream metrics;
    if (!a.metrics.empty()) {
        metrics.open(a.metrics, std::ios::trunc);
        if (!metrics) throw std::runtime_error("cannot write " + a.metrics);
        metrics << "epoch,lr,train_loss,train_accuracy,test_accuracy,seconds\n";
    }
    auto on_epoch = [&](const evt::EpochMetrics& m) {
        std::cout << "epoch=" << m.epoch << " lr=" << m.lr << " train_loss=" << fmt(m.train_loss)
                  << " train_accuracy=" << fmt(m.train_accuracy)
                  << " test_accuracy=" << (m.test_accuracy ? fmt(*m.test_accuracy) : "nan")
                  << " seconds=" << fmt(m.seconds, 3) << std::endl;
        if (metrics.is_open()) {
            metrics << m.epoch << ',' << m.lr << ',' << fmt(m.train_loss, 9) << ',' << fmt(m.train_accuracy)
                    << ',' << (m.test_accuracy ? fmt(*m.test_accuracy) : "") << ',' << fmt(m.seconds, 3)
                    << '\n';
        }
    };
    const auto result = evt::train(train_samples, cfg.model, cfg.train, test_samples, on_epoch);

    evt::save_checkpoint({cfg.model, cfg.repr, result.params}, out);
    std::cout << "checkpoint out=" << out.string() << " parameters=" << evt::parameter_count(result.params)
              << '\n';
    if (!test_samples.empty()) {
        std::cout << "final test_accuracy=" << fmt(evt::evaluate(test_samples, result.params, cfg.model))
                  << '\n';
    }
    return 0;
}

// ---- infer -------------------------------------------------------------------

int run_infer(const std::vector<std::string>& inputs, const std::string& checkpoint,
              const GeometryFlags& geo, const std::string& dump_dir, bool timings) {
    if (checkpoint.empty()) throw UsageError("infer needs --checkpoint");
    const auto ckpt = evt::load_checkpoint(checkpoint);
    std::vector<fs::path> paths;
    for (const auto& in : inputs) {
        if (fs::is_directory(in)) {
            const auto files = dataset_files(in);
            paths.insert(paths.end(), files.begin(), files.end());
        } else {
            paths.emplace_back(in);
        }
    }
    if (!dump_dir.empty()) fs::create_directories(dump_dir);

    std::size_t labeled = 0, correct = 0;
    for (const auto& path : paths) {
        const auto stream = load_any(path, geo);
        evt::WindowIterator it(stream, ckpt.repr);
        evt::LatentMemory memory = evt::LatentMemory::fresh(ckpt.params);
        std::size_t index = 0;
        while (auto w = it.next()) {
            const auto t0 = std::chrono::steady_clock::now();
            auto out = evt::process_window(w->tokens, memory, ckpt.params, ckpt.model, !dump_dir.empty());
            memory = evt::memory_update(memory, out.latents);
            const double ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            if (timings) {
                std::cout << "window stream=" << path.filename().string() << " index=" << index
                          << " T=" << w->tokens.size() << " ms=" << fmt(ms, 3) << '\n';
            }
            if (!dump_dir.empty()) {
                for (std::size_t h = 0; h < out.cross_attention.size(); ++h) {
                    const fs::path f = fs::path(dump_dir) / (path.stem().string() + "_w" +
                                                            std::to_string(index) + "_h" + std::to_string(h) + ".csv");
                    std::ofstream csv(f, std::ios::trunc);
                    csv << "latent";
                    for (const auto& t : w->tokens) csv << ",r" << t.grid_row << "c" << t.grid_col;
                    csv << '\n';
                    const auto& a = out.cross_attention[h];
                    for (std::size_t r = 0; r < a.rows(); ++r) {
                        csv << r;
                        for (double v : a.row(r)) csv << ',' << v;
                        csv << '\n';
                    }
                }
            }
            ++index;
        }
        if (stream.label()) ++labeled;
        if (memory.windows_seen == 0) {
            std::cout << "stream=" << path.filename().string() << " error=no_information\n";
            continue;
        }
        const auto lp = evt::classify(memory, ckpt.params, ckpt.model);
        const int predicted = evt::argmax(lp);
        std::cout << "stream=" << path.filename().string() << " predicted=" << predicted
                  << " label=" << (stream.label() ? std::to_string(*stream.label()) : "none")
                  << " windows=" << memory.windows_seen << " probs=";
        for (std::size_t c = 0; c < lp.size(); ++c) std::cout << (c ? ";" : "") << fmt(std::exp(lp[c]), 4);
        std::cout << '\n';
        if (stream.label() && *stream.label() == predicted) ++correct;
    }
    if (labeled > 0) {
        std::cout << "accuracy=" << fmt(static_cast<double>(correct) / static_cast<double>(labeled))
                  << " streams=" << labeled << '\n';
    }
    return 0;
}

// ---- bench -------------------------------------------------------------------

struct BenchArgs {
    std::size_t tokens = 45;
    int reps = 0;
    int warmup = 5;
    std::string stream;
    std::string csv;
    bool verify = false;
    double budget_ms = 0.0;
};

int run_bench(const BenchArgs& a, const GeometryFlags& geo, const ConfigFlags& cf, std::uint64_t seed) {
    evt::RunConfig cfg = cf.load();
    cfg.model.grid_h = cfg.repr.grid_rows(geo.height);
    cfg.model.grid_w = cfg.repr.grid_cols(geo.width);
    cfg.model.token_in = cfg.repr.token_length();
    cfg.model.validate();

    const auto report = evt::count_flops(cfg.model, a.tokens);
    std::ostringstream table;
    table << "component,flops\n"
          << "ff1," << report.ff1 << '\n'
          << "ff2," << report.ff2 << '\n'
          << "cross_attention," << report.cross_attention << '\n'
          << "self_attention," << report.self_attention << '\n'
          << "classifier," << report.classifier << '\n'
          << "total," << report.total << '\n';
    std::cout << table.str();
    std::cout << "summary tokens=" << report.tokens << " total_gflops=" << fmt(report.total / 1e9, 4)
              << " parameters=" << report.parameters << " parameters_m=" << fmt(report.parameters / 1e6, 3)
              << '\n';

    std::ofstream csv;
    if (!a.csv.empty()) {
        csv.open(a.csv, std::ios::trunc);
        if (!csv) throw std::runtime_error("cannot write " + a.csv);
        csv << table.str();
    }

    if (a.verify) {
        const auto v = evt::verify_flops(cfg.model, a.tokens, seed);
        std::cout << "verify instrumented=" << v.instrumented.total() << " analytic=" << v.analytic.total
                  << " deviation=" << fmt(v.relative_deviation, 6) << '\n';
    }

    if (a.reps > 0 || !a.stream.empty()) {
        evt::LatencyOptions opts;
        opts.reps = std::max(1, a.reps);
        opts.warmup = a.warmup;
        opts.budget_ms = a.budget_ms;
        const auto params = evt::init_params(cfg.model, seed);
        evt::LatencyReport lat;
        if (!a.stream.empty()) {
            lat = evt::measure_latency(load_any(a.stream, geo), params, cfg.model, cfg.repr, opts);
        } else {
            const auto tokens = evt::random_tokens(cfg.model, a.tokens, seed);
            const double budget = a.budget_ms > 0 ? a.budget_ms : cfg.repr.delta_t / 1000.0;
            lat = evt::measure_window_latency(tokens, params, cfg.model, budget, opts);
        }
        std::cout << "latency mean_ms=" << fmt(lat.mean_ms, 3) << " median_ms=" << fmt(lat.median_ms, 3)
                  << " p95_ms=" << fmt(lat.p95_ms, 3) << " budget_ms=" << fmt(lat.budget_ms, 3)
                  << " budget_met=" << (lat.budget_met ? 1 : 0) << '\n';
        if (csv.is_open()) {
            csv << "window,tokens,rep,ms\n";
            for (std::size_t w = 0; w < lat.samples_ms.size(); ++w) {
                for (std::size_t r = 0; r < lat.samples_ms[w].size(); ++r) {
                    csv << w << ',' << lat.tokens[w] << ',' << r << ',' << fmt(lat.samples_ms[w][r], 4) << '\n';
                }
            }
        }
    }
    return 0;
}

// ---- stats -------------------------------------------------------------------

int run_stats(const std::vector<std::string>& inputs, const GeometryFlags& geo, const ConfigFlags& cf,
              const std::string& csv_path) {
    const auto cfg = cf.load();
    std::vector<evt::EventStream> streams;
    for (const auto& in : inputs) {
        if (fs::is_directory(in)) {
            auto ds = load_dataset(in, geo);
            std::move(ds.begin(), ds.end(), std::back_inserter(streams));
        } else {
            streams.push_back(load_any(in, geo));
        }
    }
    if (streams.empty()) throw UsageError("stats needs at least one stream or directory");
    const auto stats = evt::patch_stats(streams, cfg.repr);
    std::ostringstream hist;
    hist << "T,windows\n";
    for (const auto& [t, n] : stats.histogram) hist << t << ',' << n << '\n';
    std::cout << hist.str();
    std::cout << "summary streams=" << streams.size() << " windows=" << stats.windows
              << " mean_T=" << fmt(stats.mean_tokens, 3) << " median_T=" << fmt(stats.median_tokens, 1)
              << " active_fraction=" << fmt(stats.mean_active_fraction, 4) << '\n';
    if (!csv_path.empty()) {
        std::ofstream csv(csv_path, std::ios::trunc);
        if (!csv) throw std::runtime_error("cannot write " + csv_path);
        csv << hist.str();
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Event-stream transformer: synthesize, represent, train, infer, benchmark"};
    app.require_subcommand(1);
    app.fallthrough();  // --seed / --deterministic accepted after the subcommand too
    std::optional<std::uint64_t> seed;
    bool deterministic = false;
    app.add_option("--seed", seed, "Seed for all randomness");
    app.add_flag("--deterministic", deterministic, "Single-threaded, bitwise reproducible execution");

    SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("synth", "Generate synthetic gesture streams");
    synth_cmd->add_option("--class", synth.class_id, "Motion class id (0-5)");
    synth_cmd->add_option("--duration", synth.duration, "Duration in microseconds")->capture_default_str();
    synth_cmd->add_option("--width", synth.width, "Sensor width")->capture_default_str();
    synth_cmd->add_option("--height", synth.height, "Sensor height")->capture_default_str();
    synth_cmd->add_option("--signal-rate", synth.signal_rate, "Events per pixel transition")->capture_default_str();
    synth_cmd->add_option("--noise-rate", synth.noise_rate, "Noise events per pixel per second")->capture_default_str();
    synth_cmd->add_option("--out", synth.out, "Output stream file");
    synth_cmd->add_option("--format", synth.format, "binary|csv (default: from extension)");
    synth_cmd->add_option("--dataset-dir", synth.dataset_dir, "Write a labeled dataset into this directory");
    synth_cmd->add_option("--classes", synth.classes, "Classes in dataset mode")->capture_default_str();
    synth_cmd->add_option("--per-class", synth.per_class, "Streams per class in dataset mode");

    GeometryFlags geo;
    ConfigFlags cf;

    std::string repr_path, repr_tokens;
    bool repr_ascii = false;
    auto* repr_cmd = app.add_subcommand("repr", "Per-window activated-patch statistics");
    repr_cmd->add_option("stream", repr_path, "Stream file")->required();
    repr_cmd->add_flag("--ascii", repr_ascii, "Draw the activated-patch grid");
    repr_cmd->add_option("--tokens-csv", repr_tokens, "Dump tokens as CSV");
    geo.attach(repr_cmd);
    cf.attach(repr_cmd);

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "Train on a directory of labeled streams");
    train_cmd->add_option("--data", train.data, "Training stream directory")->required();
    train_cmd->add_option("--test-data", train.test_data, "Held-out stream directory");
    train_cmd->add_option("--out", train.out, "Checkpoint output path")->required();
    train_cmd->add_option("--metrics", train.metrics, "Per-epoch metrics CSV");
    geo.attach(train_cmd);
    cf.attach(train_cmd);

    std::vector<std::string> infer_inputs;
    std::string infer_ckpt, infer_dump;
    bool infer_timings = false;
    auto* infer_cmd = app.add_subcommand("infer", "Classify streams with a checkpoint");
    infer_cmd->add_option("streams", infer_inputs, "Stream files or directories")->required();
    infer_cmd->add_option("--checkpoint", infer_ckpt, "Checkpoint from `train`")->required();
    infer_cmd->add_option("--dump-attention", infer_dump, "Write cross-attention weights as CSV here");
    infer_cmd->add_flag("--timings", infer_timings, "Print per-window processing time");
    geo.attach(infer_cmd);

    BenchArgs bench;
    auto* bench_cmd = app.add_subcommand("bench", "FLOP accounting and latency");
    bench_cmd->add_option("--tokens", bench.tokens, "Activated patches per window")->capture_default_str();
    bench_cmd->add_option("--reps", bench.reps, "Timed repetitions (0: FLOPs only)");
    bench_cmd->add_option("--warmup", bench.warmup, "Untimed warmup runs")->capture_default_str();
    bench_cmd->add_option("--stream", bench.stream, "Time windows of this stream instead of random tokens");
    bench_cmd->add_option("--budget-ms", bench.budget_ms, "Latency budget (default: delta_t)");
    bench_cmd->add_option("--csv", bench.csv, "Write reports as CSV");
    bench_cmd->add_flag("--verify", bench.verify, "Cross-check analytic FLOPs against instrumented kernels");
    geo.attach(bench_cmd);
    cf.attach(bench_cmd);

    std::vector<std::string> stats_inputs;
    std::string stats_csv;
    auto* stats_cmd = app.add_subcommand("stats", "Activated-patch distribution");
    stats_cmd->add_option("inputs", stats_inputs, "Stream files or directories")->required();
    stats_cmd->add_option("--csv", stats_csv, "Write the histogram as CSV");
    geo.attach(stats_cmd);
    cf.attach(stats_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e, std::cerr, std::cerr);
        return 1;
    }

    if (deterministic) omp_set_num_threads(1);
    const std::uint64_t the_seed = seed.value_or(0);
    try {
        if (*synth_cmd) return run_synth(synth, the_seed);
        if (*repr_cmd) return run_repr(repr_path, geo, cf, repr_ascii, repr_tokens);
        if (*train_cmd) return run_train(train, geo, cf, seed, deterministic);
        if (*infer_cmd) return run_infer(infer_inputs, infer_ckpt, geo, infer_dump, infer_timings);
        if (*bench_cmd) return run_bench(bench, geo, cf, the_seed);
        if (*stats_cmd) return run_stats(stats_inputs, geo, cf, stats_csv);
    } catch (const UsageError& e) {
        std::cerr << "error=usage message=\"" << e.what() << "\"\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error=usage message=\"" << e.what() << "\"\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error=data message=\"" << e.what() << "\"\n";
        return 2;
    }
    return 1;
}
