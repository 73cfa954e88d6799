// Command-line surface of the toolkit: one subcommand per pipeline stage.
// Machine-readable JSON goes to stdout, human summaries to stderr.
// Exit codes: 0 success, 1 runtime error, 2 usage error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "evk/augment.hpp"
#include "evk/cmax.hpp"
#include "evk/core.hpp"
#include "evk/encode.hpp"
#include "evk/metrics.hpp"
#include "evk/simgen.hpp"
#include "evk/store.hpp"
#include "evk/viz.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct StoreFlags {
    std::string codec = "deflate";
    std::uint32_t chunk_size = 65536;

    evk::store::WriteOptions options() const {
        evk::store::WriteOptions opts;
        opts.codec = evk::store::codec_from_name(codec);
        opts.chunk_size = chunk_size;
        return opts;
    }
};

void add_store_flags(CLI::App* cmd, StoreFlags& flags) {
    cmd->add_option("--codec", flags.codec, "container codec: none|deflate")
        ->default_val("deflate");
    cmd->add_option("--chunk-size", flags.chunk_size, "events per chunk")->default_val(65536);
}

json load_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return json::parse(in);
}

evk::store::Stride stride_from_flags(const evk::store::Reader& reader,
                                     std::optional<std::uint64_t> millis,
                                     std::optional<std::uint64_t> events,
                                     std::optional<std::uint64_t> gray_frames) {
    const int given = (millis ? 1 : 0) + (events ? 1 : 0) + (gray_frames ? 1 : 0);
    if (given > 1) throw std::runtime_error("give at most one stride option");
    if (millis) return evk::store::Stride::millis(*millis);
    if (events) return evk::store::Stride::events(*events);
    if (gray_frames) return evk::store::Stride::gray_frames(*gray_frames);
    // default: one flow period, falling back to 40 ms
    const double rate = reader.props().flow_rate_hz;
    const auto period_ms = static_cast<std::uint64_t>(rate > 0 ? std::llround(1000.0 / rate) : 40);
    return evk::store::Stride::millis(std::max<std::uint64_t>(1, period_ms));
}

int cmd_info(const std::string& container) {
    evk::store::Reader reader{fs::path(container)};
    json out{{"path", container},
             {"width", reader.props().width},
             {"height", reader.props().height},
             {"event_clock_hz", reader.props().event_clock_hz},
             {"gray_rate_hz", reader.props().gray_rate_hz},
             {"flow_rate_hz", reader.props().flow_rate_hz},
             {"threshold_pos", reader.props().threshold_pos},
             {"threshold_neg", reader.props().threshold_neg},
             {"codec", evk::store::codec_name(reader.codec())},
             {"chunk_size", reader.chunk_size()},
             {"num_events", reader.num_events()},
             {"num_gray", reader.num_gray()},
             {"num_flow", reader.num_flow()},
             {"duration_ms", reader.duration_ms()}};
    if (reader.props_json().contains("meta")) out["meta"] = reader.props_json().at("meta");
    std::cout << out.dump(2) << "\n";
    std::cerr << container << ": " << reader.num_events() << " events, " << reader.num_gray()
              << " gray frames, " << reader.num_flow() << " flow fields, "
              << reader.duration_ms() << " ms\n";
    return 0;
}

int cmd_import_csv(const std::string& events_csv, const std::string& grays_dir,
                   const std::string& flows_file, const std::string& props, const std::string& out,
                   const StoreFlags& flags) {
    const auto container = evk::store::import_csv(events_csv, grays_dir, flows_file, props, out,
                                                  flags.options());
    evk::store::Reader reader(container.path);
    std::cout << json{{"path", out}, {"num_events", reader.num_events()}}.dump(2) << "\n";
    std::cerr << "imported " << reader.num_events() << " events into " << out << "\n";
    return 0;
}

int cmd_simulate(const std::string& spec_path, const std::string& out, const StoreFlags& flags) {
    const auto spec = evk::simgen::SceneSpec::from_json(load_json_file(spec_path));
    const auto container = evk::simgen::make_dataset(spec, out, flags.options());
    evk::store::Reader reader(container.path);
    std::cout << json{{"path", out},
                      {"num_events", reader.num_events()},
                      {"num_gray", reader.num_gray()},
                      {"num_flow", reader.num_flow()},
                      {"duration_ms", reader.duration_ms()}}
                     .dump(2)
              << "\n";
    std::cerr << "simulated " << reader.num_events() << " events into " << out << "\n";
    return 0;
}

int cmd_slice(const std::string& in, std::int64_t t0_ms, std::int64_t t1_ms,
              const std::string& out, const StoreFlags& flags) {
    evk::store::Reader reader{fs::path(in)};
    const evk::store::Slice slice = reader.slice_by_time(t0_ms, t1_ms);

    evk::GraySequence grays;
    if (slice.gray_start) {
        grays.ts.push_back(slice.gray_start->ts);
        grays.frames.push_back(slice.gray_start->image);
    }
    if (slice.gray_end && (!slice.gray_start || slice.gray_end->ts > slice.gray_start->ts)) {
        grays.ts.push_back(slice.gray_end->ts);
        grays.frames.push_back(slice.gray_end->image);
    }
    evk::FlowSequence flows;
    if (slice.flow) flows.fields.push_back(*slice.flow);

    evk::store::write_sequence(slice.events, grays, flows, reader.props(), out, flags.options(),
                               reader.props_json().value("meta", json::object()));
    std::cout << json{{"path", out},
                      {"num_events", slice.events.size()},
                      {"t0_ms", t0_ms},
                      {"t1_ms", t1_ms}}
                     .dump(2)
              << "\n";
    return 0;
}

int cmd_encode(const std::string& in, std::int64_t t0_ms, std::int64_t t1_ms,
               const std::string& method, int bins, double sigma_us, double lambda,
               const std::string& out) {
    evk::store::Reader reader{fs::path(in)};
    const evk::store::Slice slice = reader.slice_by_time(t0_ms, t1_ms);

    std::vector<evk::EncodedFrame> frames;
    if (method == "count") {
        frames = evk::encode::encode_count(slice.events, slice.t0_us, slice.t1_us, bins,
                                           reader.props());
    } else if (method == "gaussian") {
        evk::encode::EncoderConfig config;
        config.num_bins = bins;
        config.sigma_us = sigma_us;
        config.lambda = lambda;
        frames = evk::encode::encode_gaussian(slice.events, slice.t0_us, slice.t1_us, config,
                                              reader.props());
    } else {
        throw std::runtime_error("unknown encode method: " + method);
    }

    fs::create_directories(out);
    json bins_json = json::array();
    for (std::size_t b = 0; b < frames.size(); ++b) {
        char name[24];
        std::snprintf(name, sizeof(name), "bin_%03zu.png", b);
        evk::png::write_rgb(fs::path(out) / name, evk::viz::render_encoded(frames[b]));
        double pos_sum = 0.0, neg_sum = 0.0;
        for (double v : frames[b].pos.data) pos_sum += v;
        for (double v : frames[b].neg.data) neg_sum += v;
        bins_json.push_back({{"file", name},
                             {"t0_us", frames[b].t0},
                             {"t1_us", frames[b].t1},
                             {"pos_sum", pos_sum},
                             {"neg_sum", neg_sum}});
    }
    std::cout << json{{"method", method}, {"bins", bins_json}}.dump(2) << "\n";
    return 0;
}

int cmd_augment(const std::string& in, const std::string& op, const std::string& out,
                double factor, double rate, const std::string& axis, int x, int y, int w, int h,
                std::uint64_t seed, const StoreFlags& flags) {
    evk::store::Reader reader{fs::path(in)};
    const evk::EventStream events = reader.read_all_events();
    const auto meta = reader.props_json().value("meta", json::object());

    auto write_events_only = [&](const evk::EventStream& transformed, bool keep_channels) {
        evk::GraySequence grays;
        evk::FlowSequence flows;
        if (keep_channels) {
            grays = reader.read_all_gray();
            flows = reader.read_all_flow();
        }
        evk::store::write_sequence(transformed, grays, flows, reader.props(), out, flags.options(),
                                   meta);
    };

    if (op == "time-warp") {
        // gray/flow timestamps would no longer match; the output carries events only
        write_events_only(evk::augment::time_warp(events, factor), false);
    } else if (op == "noise") {
        write_events_only(evk::augment::inject_noise(events, reader.props(), rate, seed), true);
    } else if (op == "flip-polarity") {
        write_events_only(evk::augment::flip_polarity(events), true);
    } else if (op == "temporal-reverse") {
        write_events_only(evk::augment::temporal_reverse(events), false);
    } else if (op == "spatial-flip") {
        const auto flipped = evk::augment::spatial_flip(
            events, reader.read_all_gray(), reader.read_all_flow(), reader.props(),
            axis == "vertical" ? evk::augment::FlipAxis::vertical
                               : evk::augment::FlipAxis::horizontal);
        evk::store::write_sequence(flipped.events, flipped.grays, flipped.flows, flipped.props,
                                   out, flags.options(), meta);
    } else if (op == "crop") {
        evk::augment::CoTransformed cropped;
        if (w > 0 && h > 0 && x >= 0 && y >= 0) {
            cropped = evk::augment::crop(events, reader.read_all_gray(), reader.read_all_flow(),
                                         reader.props(), evk::augment::CropRect{x, y, w, h});
        } else if (w > 0 && h > 0) {
            cropped = evk::augment::random_crop(events, reader.read_all_gray(),
                                                reader.read_all_flow(), reader.props(), w, h, seed);
        } else {
            throw std::runtime_error("crop requires --crop-w and --crop-h (and optionally --crop-x/--crop-y)");
        }
        evk::store::write_sequence(cropped.events, cropped.grays, cropped.flows, cropped.props,
                                   out, flags.options(), meta);
    } else {
        throw std::runtime_error("unknown augmentation op: " + op);
    }

    evk::store::Reader check{fs::path(out)};
    std::cout << json{{"path", out}, {"op", op}, {"num_events", check.num_events()}}.dump(2)
              << "\n";
    return 0;
}

int cmd_render(const std::string& in, const std::string& kind, const std::string& out,
               std::optional<std::uint64_t> stride_ms, std::optional<std::uint64_t> stride_events,
               std::optional<std::uint64_t> stride_gray) {
    evk::store::Reader reader{fs::path(in)};
    const auto stride = stride_from_flags(reader, stride_ms, stride_events, stride_gray);
    const auto files = evk::viz::export_sequence(reader, stride, out,
                                                 evk::viz::render_kind_from_name(kind));
    std::cout << json{{"path", out}, {"kind", kind}, {"frames", files.size()}}.dump(2) << "\n";
    std::cerr << "wrote " << files.size() << " frames to " << out << "\n";
    return 0;
}

int cmd_estimate_flow(const std::string& in, const std::string& config_path,
                      const std::string& out, std::optional<std::uint64_t> stride_ms,
                      std::optional<double> smoothness_weight,
                      const std::string& objective_name, const StoreFlags& flags) {
    evk::store::Reader reader{fs::path(in)};
    evk::cmax::CmaxConfig config;
    if (!config_path.empty()) config = evk::cmax::CmaxConfig::from_json(load_json_file(config_path));
    if (smoothness_weight) config.smoothness_weight = *smoothness_weight;  // flags win over the file
    if (!objective_name.empty()) config.objective = evk::cmax::objective_from_name(objective_name);
    config.require_valid();

    const double rate = reader.props().flow_rate_hz;
    const std::uint64_t default_ms =
        rate > 0 ? static_cast<std::uint64_t>(std::llround(1000.0 / rate)) : 40;
    const std::uint64_t step_ms = stride_ms.value_or(std::max<std::uint64_t>(1, default_ms));

    evk::FlowSequence estimates;
    json trace_json = json::array();
    auto it = evk::store::iterate(reader, evk::store::Stride::millis(step_ms));
    while (auto slice = it.next()) {
        if (slice->events.empty()) {
            evk::FlowField zero(reader.props().width, reader.props().height, slice->t0_us,
                                slice->t1_us);
            estimates.fields.push_back(std::move(zero));
            trace_json.push_back({{"t0_ms", slice->t0_us / 1000},
                                  {"t1_ms", slice->t1_us / 1000},
                                  {"skipped", "no events"}});
            continue;
        }
        const auto result = evk::cmax::estimate_flow_cmax(slice->events, config, reader.props(),
                                                          slice->t0_us, slice->t1_us);
        trace_json.push_back({{"t0_ms", slice->t0_us / 1000},
                              {"t1_ms", slice->t1_us / 1000},
                              {"iterations", result.iterations},
                              {"objective_initial", result.objective_initial},
                              {"objective_final", result.objective_final},
                              {"trace", result.trace},
                              {"level_starts", result.level_starts}});
        estimates.fields.push_back(result.flow);
    }

    evk::store::write_sequence(reader.read_all_events(), reader.read_all_gray(), estimates,
                               reader.props(), out, flags.options(),
                               reader.props_json().value("meta", json::object()));
    {
        std::ofstream trace_out(fs::path(out) / "trace.json");
        trace_out << json{{"config", config.to_json()}, {"slices", trace_json}}.dump(2) << "\n";
    }
    std::cout << json{{"path", out}, {"slices", estimates.fields.size()}}.dump(2) << "\n";
    std::cerr << "estimated " << estimates.fields.size() << " flow fields into " << out << "\n";
    return 0;
}

int cmd_eval(const std::string& pred, const std::string& gt, const std::string& thresholds_arg) {
    evk::store::Reader pred_reader{fs::path(pred)};
    evk::store::Reader gt_reader{fs::path(gt)};

    std::vector<double> thresholds;
    std::stringstream ss(thresholds_arg);
    std::string token;
    while (std::getline(ss, token, ',')) thresholds.push_back(std::stod(token));
    if (thresholds.empty()) thresholds = {1.0, 3.0};

    evk::metrics::MetricsAccumulator acc(thresholds);
    for (std::size_t k = 0; k < gt_reader.num_flow(); ++k) {
        const evk::FlowField gt_field = gt_reader.flow_field(k);
        const auto pred_field = pred_reader.flow_between(gt_field.t0, gt_field.t1);
        if (!pred_field) continue;
        const auto i0 = pred_reader.find_event_index(gt_field.t0);
        const auto i1 = pred_reader.find_event_index(gt_field.t1);
        if (i0 >= i1) continue;
        const evk::EventStream events = pred_reader.read_events(i0, i1);
        const auto mask = evk::metrics::event_mask(events, pred_reader.props().width,
                                                   pred_reader.props().height);
        acc.add(*pred_field, gt_field, mask);
    }
    std::cout << acc.report().to_json().dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"event-camera data toolkit"};
    app.require_subcommand(1);

    // info
    std::string info_container;
    auto* info = app.add_subcommand("info", "print container properties and counts");
    info->add_option("container", info_container, "container directory")->required();

    // import-csv
    std::string imp_events, imp_grays, imp_flows, imp_props, imp_out;
    StoreFlags imp_flags;
    auto* import_csv = app.add_subcommand("import-csv", "build a container from a t_us,x,y,p CSV");
    import_csv->add_option("--events", imp_events, "events CSV file")->required();
    import_csv->add_option("--grays-dir", imp_grays, "directory of <t_us>.pgm frames");
    import_csv->add_option("--flows", imp_flows, "EVFL flow file");
    import_csv->add_option("--props", imp_props, "props JSON file")->required();
    import_csv->add_option("--out", imp_out, "output container directory")->required();
    add_store_flags(import_csv, imp_flags);

    // simulate
    std::string sim_spec, sim_out;
    StoreFlags sim_flags;
    auto* simulate = app.add_subcommand("simulate", "generate a synthetic dataset from a scene spec");
    simulate->add_option("--spec", sim_spec, "scene spec JSON file")->required();
    simulate->add_option("--out", sim_out, "output container directory")->required();
    add_store_flags(simulate, sim_flags);

    // slice
    std::string slice_in, slice_out;
    std::int64_t slice_t0 = 0, slice_t1 = 0;
    StoreFlags slice_flags;
    auto* slice = app.add_subcommand("slice", "write a time slice as a sub-container");
    slice->add_option("--in", slice_in, "input container")->required();
    slice->add_option("--t0-ms", slice_t0, "slice start (ms)")->required();
    slice->add_option("--t1-ms", slice_t1, "slice end (ms)")->required();
    slice->add_option("--out", slice_out, "output container directory")->required();
    add_store_flags(slice, slice_flags);

    // encode
    std::string enc_in, enc_method = "count", enc_out;
    std::int64_t enc_t0 = 0, enc_t1 = 0;
    int enc_bins = 1;
    double enc_sigma = 1000.0, enc_lambda = 1.0;
    auto* encode = app.add_subcommand("encode", "encode a slice into 2-channel frames");
    encode->add_option("--in", enc_in, "input container")->required();
    encode->add_option("--t0-ms", enc_t0, "slice start (ms)")->required();
    encode->add_option("--t1-ms", enc_t1, "slice end (ms)")->required();
    encode->add_option("--method", enc_method, "count|gaussian")->default_val("count");
    encode->add_option("--bins", enc_bins, "number of bins")->default_val(1);
    encode->add_option("--sigma-us", enc_sigma, "Gaussian width (us)")->default_val(1000.0);
    encode->add_option("--lambda", enc_lambda, "Gaussian scale factor")->default_val(1.0);
    encode->add_option("--out", enc_out, "output directory for bin PNGs")->required();

    // augment
    std::string aug_in, aug_op, aug_out, aug_axis = "horizontal";
    double aug_factor = 1.0, aug_rate = 0.0;
    int aug_x = -1, aug_y = -1, aug_w = 0, aug_h = 0;
    std::uint64_t aug_seed = 0;
    StoreFlags aug_flags;
    auto* augment = app.add_subcommand("augment", "apply an augmentation and write a container");
    augment->add_option("--in", aug_in, "input container")->required();
    augment
        ->add_option("--op", aug_op,
                     "time-warp|noise|flip-polarity|spatial-flip|temporal-reverse|crop")
        ->required();
    augment->add_option("--out", aug_out, "output container directory")->required();
    augment->add_option("--factor", aug_factor, "time-warp factor");
    augment->add_option("--rate", aug_rate, "noise rate (events/px/s)");
    augment->add_option("--axis", aug_axis, "spatial-flip axis: horizontal|vertical");
    augment->add_option("--crop-x", aug_x, "crop left");
    augment->add_option("--crop-y", aug_y, "crop top");
    augment->add_option("--crop-w", aug_w, "crop width");
    augment->add_option("--crop-h", aug_h, "crop height");
    augment->add_option("--seed", aug_seed, "RNG seed");
    add_store_flags(augment, aug_flags);

    // render
    std::string render_in, render_kind = "overlay", render_out;
    std::optional<std::uint64_t> render_ms, render_events, render_gray;
    auto* render = app.add_subcommand("render", "export slices as numbered PNGs");
    render->add_option("--in", render_in, "input container")->required();
    render->add_option("--kind", render_kind, "overlay|flow|encoded")->default_val("overlay");
    render->add_option("--out", render_out, "output directory")->required();
    render->add_option("--stride-ms", render_ms, "slice length (ms)");
    render->add_option("--stride-events", render_events, "events per slice");
    render->add_option("--stride-gray", render_gray, "gray frames per slice");

    // estimate-flow
    std::string est_in, est_config, est_out, est_objective;
    std::optional<std::uint64_t> est_stride;
    std::optional<double> est_smoothness;
    StoreFlags est_flags;
    auto* estimate = app.add_subcommand("estimate-flow",
                                        "contrast-maximization flow over strided slices");
    estimate->add_option("--in", est_in, "input container")->required();
    estimate->add_option("--config", est_config, "cmax config JSON file");
    estimate->add_option("--out", est_out, "output flow container directory")->required();
    estimate->add_option("--stride-ms", est_stride, "slice length (ms), default one flow period");
    estimate->add_option("--smoothness-weight", est_smoothness, "overrides the config file");
    estimate->add_option("--objective", est_objective,
                         "variance|grad_mag|multifocal_normalized, overrides the config file");
    add_store_flags(estimate, est_flags);

    // eval
    std::string eval_pred, eval_gt, eval_thresholds = "1,3";
    auto* eval = app.add_subcommand("eval", "compare predicted flow against ground truth");
    eval->add_option("--pred", eval_pred, "container with predicted flow")->required();
    eval->add_option("--gt", eval_gt, "container with ground-truth flow")->required();
    eval->add_option("--thresholds", eval_thresholds, "XPE thresholds, comma-separated")
        ->default_val("1,3");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) {
            app.exit(e);  // --help
            return 0;
        }
        std::cerr << e.what() << "\n\n" << app.help() << "\n";
        return 2;
    }

    try {
        if (info->parsed()) return cmd_info(info_container);
        if (import_csv->parsed())
            return cmd_import_csv(imp_events, imp_grays, imp_flows, imp_props, imp_out, imp_flags);
        if (simulate->parsed()) return cmd_simulate(sim_spec, sim_out, sim_flags);
        if (slice->parsed()) return cmd_slice(slice_in, slice_t0, slice_t1, slice_out, slice_flags);
        if (encode->parsed())
            return cmd_encode(enc_in, enc_t0, enc_t1, enc_method, enc_bins, enc_sigma, enc_lambda,
                              enc_out);
        if (augment->parsed())
            return cmd_augment(aug_in, aug_op, aug_out, aug_factor, aug_rate, aug_axis, aug_x,
                               aug_y, aug_w, aug_h, aug_seed, aug_flags);
        if (render->parsed())
            return cmd_render(render_in, render_kind, render_out, render_ms, render_events,
                              render_gray);
        if (estimate->parsed())
            return cmd_estimate_flow(est_in, est_config, est_out, est_stride, est_smoothness,
                                     est_objective, est_flags);
        if (eval->parsed()) return cmd_eval(eval_pred, eval_gt, eval_thresholds);
        std::cerr << app.help() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
