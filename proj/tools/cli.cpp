#include "cli.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <json.hpp>

#include "vitloss/gradcheck.hpp"
#include "vitloss/image_io.hpp"
#include "vitloss/losses.hpp"
#include "vitloss/optimize.hpp"
#include "vitloss/similarity.hpp"
#include "vitloss/weights_io.hpp"

namespace vitloss::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---- small helpers ----------------------------------------------------------

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_fixed9(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.9f", v);
  return buf;
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
    throw IoError("SHA-256 unavailable");
  }
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::string hex;
  char byte[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(byte, sizeof byte, "%02x", md[i]);
    hex += byte;
  }
  return hex;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json psnr_json(double v) { return psnr_identical(v) ? json("identical") : json(v); }

// Everything a manifest needs: the canonical command line (all defaults
// spelled out), the resolved configuration, input digests and outputs.
struct Manifest {
  std::string command;
  std::vector<std::string> args;
  json config = json::object();
  json inputs = json::array();
  json outputs = json::object();
  std::vector<std::string> output_flags;
  std::uint64_t seed = 0;

  void add_input(const std::string& role, const std::string& path) {
    inputs.push_back({{"role", role}, {"path", path}, {"sha256", sha256_file(path)}});
  }

  void write(const fs::path& path) const {
    const json j{{"tool", "vitloss"},
                 {"version", kToolVersion},
                 {"command", command},
                 {"args", args},
                 {"config", config},
                 {"inputs", inputs},
                 {"outputs", outputs},
                 {"output_flags", output_flags},
                 {"seed", seed}};
    write_text(path, j.dump(2) + "\n");
  }
};

// ---- shared loss/encoder flags ------------------------------------------------

struct EncoderFlags {
  std::string weights;
  std::string feature = "token";
  std::string precision = "f64";
  bool no_crop = false;
  bool tap_final_norm = false;

  void add(CLI::App* app) {
    app->add_option("--weights", weights, "VPW1 weight file")->required();
    app->add_option("--feature", feature, "token | query | key | value")
        ->check(CLI::IsMember({"token", "query", "key", "value"}));
    app->add_option("--precision", precision, "f32 | f64")->check(CLI::IsMember({"f32", "f64"}));
    app->add_flag("--no-crop", no_crop, "refuse images larger than the encoder input");
    app->add_flag("--tap-final-norm", tap_final_norm,
                  "at the last layer, tap tokens after the final LayerNorm");
  }

  void append_args(std::vector<std::string>& args) const {
    args.insert(args.end(), {"--weights", weights, "--feature", feature, "--precision", precision});
    if (no_crop) args.push_back("--no-crop");
    if (tap_final_norm) args.push_back("--tap-final-norm");
  }
};

struct LossFlags {
  EncoderFlags encoder;
  std::string loss = "local";
  std::size_t layer = 5;
  double mask_ratio = 0.0;
  double lambda = 0.0;
  double p = 2.0;
  std::string metric = "l1";
  double charbonnier_eps = 1e-3;
  std::uint64_t seed = 0;
  std::string local_norm = "l1";
  bool local_mean = false;
  bool no_root = false;
  CLI::Option* mask_ratio_opt = nullptr;
  CLI::Option* lambda_opt = nullptr;

  void add(CLI::App* app) {
    encoder.add(app);
    app->add_option("--loss", loss, "local | global")->check(CLI::IsMember({"local", "global"}));
    app->add_option("--layer", layer, "transformer layer to tap (1-based)");
    mask_ratio_opt = app->add_option("--mask-ratio", mask_ratio,
                                     "fraction of patch tokens dropped (default 0.5 local, 0 global)");
    lambda_opt = app->add_option("--lambda", lambda,
                                 "weight of the perceptual term (default 1 local, 1e-5 global)");
    app->add_option("--p", p, "Wasserstein order");
    app->add_option("--metric", metric, "l1 | l2 | charbonnier | psnr")
        ->check(CLI::IsMember({"l1", "l2", "charbonnier", "psnr"}));
    app->add_option("--charbonnier-eps", charbonnier_eps, "Charbonnier epsilon");
    app->add_option("--seed", seed, "mask seed");
    app->add_option("--local-norm", local_norm, "l1 (entrywise sum) | l2 (Euclidean)")
        ->check(CLI::IsMember({"l1", "l2"}));
    app->add_flag("--local-mean", local_mean, "divide the local loss by the entry count");
    app->add_flag("--no-root", no_root, "global loss without the outer 1/p root");
  }

  LossConfig resolve() const {
    LossConfig cfg = LossConfig::defaults_for(parse_loss_kind(loss));
    cfg.layer = layer;
    cfg.feature = parse_feature_kind(encoder.feature);
    if (mask_ratio_opt->count() > 0) cfg.mask_ratio = mask_ratio;
    if (lambda_opt->count() > 0) cfg.lambda = lambda;
    cfg.p = p;
    cfg.metric = parse_deblur_metric(metric);
    cfg.charbonnier_eps = charbonnier_eps;
    cfg.seed = seed;
    cfg.local.euclidean = local_norm == "l2";
    cfg.local.mean = local_mean;
    cfg.wasserstein_no_root = no_root;
    cfg.forward.tap_after_final_norm = encoder.tap_final_norm;
    return cfg;
  }

  void append_args(std::vector<std::string>& args, const LossConfig& cfg) const {
    encoder.append_args(args);
    args.insert(args.end(), {"--loss", std::string(to_string(cfg.kind)), "--layer",
                             std::to_string(cfg.layer), "--mask-ratio", fmt_double(cfg.mask_ratio),
                             "--lambda", fmt_double(cfg.lambda), "--p", fmt_double(cfg.p),
                             "--metric", std::string(to_string(cfg.metric)), "--charbonnier-eps",
                             fmt_double(cfg.charbonnier_eps), "--seed", std::to_string(cfg.seed),
                             "--local-norm", cfg.local.euclidean ? "l2" : "l1"});
    if (cfg.local.mean) args.push_back("--local-mean");
    if (cfg.wasserstein_no_root) args.push_back("--no-root");
  }
};

json loss_config_json(const LossConfig& cfg, const EncoderFlags& enc) {
  return json{{"loss", to_string(cfg.kind)},
              {"layer", cfg.layer},
              {"feature", to_string(cfg.feature)},
              {"mask_ratio", cfg.mask_ratio},
              {"lambda", cfg.lambda},
              {"p", cfg.p},
              {"metric", to_string(cfg.metric)},
              {"charbonnier_eps", cfg.charbonnier_eps},
              {"psnr_loss_eps", kPsnrLossEps},
              {"seed", cfg.seed},
              {"local_norm", cfg.local.euclidean ? "l2" : "l1"},
              {"local_mean", cfg.local.mean},
              {"wasserstein_root", !cfg.wasserstein_no_root},
              {"tap_final_norm", cfg.forward.tap_after_final_norm},
              {"precision", enc.precision},
              {"crop", !enc.no_crop},
              {"weights", enc.weights}};
}

template <Real T>
Tensor<T> load_image(const std::string& path, const ViTConfig& config, bool allow_crop) {
  return image::fit_to_encoder(image::read(path), config, allow_crop).template cast<T>();
}

/// Calls fn.template operator()<T>() with T chosen by the precision flag.
template <typename Fn>
auto with_precision(const std::string& precision, Fn&& fn) {
  if (precision == "f32") return fn.template operator()<float>();
  return fn.template operator()<double>();
}

fs::path sibling(const std::string& prefix, const std::string& suffix) { return prefix + suffix; }

// ---- commands ----------------------------------------------------------------

struct LossCommand {
  std::string recon, ref, out_file, manifest_path;
  LossFlags flags;

  void add(CLI::App& app) {
    CLI::App* sub = app.add_subcommand("loss", "evaluate the total loss of a reconstruction");
    sub->add_option("recon", recon, "reconstructed image")->required();
    sub->add_option("ref", ref, "reference image")->required();
    flags.add(sub);
    sub->add_option("--out", out_file, "also write the JSON report here");
    sub->add_option("--manifest", manifest_path, "manifest path (default <out>.manifest.json)");
  }

  int exec(std::ostream& out) const {
    const LossConfig cfg = flags.resolve();
    const WeightBundle<float> w32 = weights::load(flags.encoder.weights);
    cfg.validate(w32.config);

    const json report = with_precision(flags.encoder.precision, [&]<Real T>() {
      const WeightBundle<T> w = w32.template cast<T>();
      const Tensor<T> x = load_image<T>(recon, w.config, !flags.encoder.no_crop);
      const Tensor<T> y = load_image<T>(ref, w.config, !flags.encoder.no_crop);
      require_same_shape(x, y, "loss images");
      const LossReport<T> r = total_loss(x, y, w, cfg, false);
      return json{{"deblur_term", r.deblur_term},
                  {"percep_term", r.percep_term},
                  {"total", r.total},
                  {"config", loss_config_json(cfg, flags.encoder)}};
    });
    const std::string text = report.dump(2) + "\n";
    out << text;

    Manifest m;
    m.command = "loss";
    m.args = {"loss", recon, ref};
    flags.append_args(m.args, cfg);
    m.config = loss_config_json(cfg, flags.encoder);
    m.add_input("recon", recon);
    m.add_input("ref", ref);
    m.add_input("weights", flags.encoder.weights);
    m.seed = cfg.seed;
    if (!out_file.empty()) {
      write_text(out_file, text);
      m.args.insert(m.args.end(), {"--out", out_file});
      m.outputs["report"] = out_file;
      m.output_flags.push_back("--out");
    }
    const std::string mpath =
        !manifest_path.empty() ? manifest_path : (out_file.empty() ? "" : out_file + ".manifest.json");
    if (!mpath.empty()) m.write(mpath);
    return kOk;
  }
};

struct HeatmapCommand {
  std::string image_path, compare_path, out_prefix, manifest_path;
  std::size_t query_row = 0, query_col = 0, layer = 5;
  EncoderFlags encoder;

  void add(CLI::App& app) {
    CLI::App* sub = app.add_subcommand("heatmap", "token self-similarity heatmap");
    sub->add_option("image", image_path, "input image")->required();
    sub->add_option("--query-row", query_row, "patch-grid row of the query token")->required();
    sub->add_option("--query-col", query_col, "patch-grid column of the query token")->required();
    sub->add_option("--layer", layer, "transformer layer to tap (1-based)");
    sub->add_option("--compare", compare_path, "second image; reports the mean heatmap delta");
    sub->add_option("--out-prefix", out_prefix, "writes <prefix>.pgm, <prefix>.csv, <prefix>.json")
        ->required();
    sub->add_option("--manifest", manifest_path, "manifest path (default <prefix>.manifest.json)");
    encoder.add(sub);
  }

  static std::string csv(const std::vector<double>& values, std::size_t grid) {
    std::string text;
    for (std::size_t r = 0; r < grid; ++r) {
      for (std::size_t c = 0; c < grid; ++c) {
        if (c) text += ',';
        text += fmt_fixed9(values[r * grid + c]);
      }
      text += '\n';
    }
    return text;
  }

  static void write_pgm(const std::vector<double>& values, std::size_t grid, const fs::path& path) {
    std::string text = "P5\n" + std::to_string(grid) + " " + std::to_string(grid) + "\n255\n";
    for (double v : values) {
      const double scaled = std::clamp((v + 1.0) / 2.0, 0.0, 1.0) * 255.0;
      text.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(scaled))));
    }
    write_text(path, text);
  }

  int exec(std::ostream& out) const {
    const WeightBundle<float> w32 = weights::load(encoder.weights);
    const std::size_t grid = w32.config.grid();
    if (query_row >= grid || query_col >= grid) {
      throw ContractError("query cell (" + std::to_string(query_row) + ", " +
                          std::to_string(query_col) + ") outside the " + std::to_string(grid) + "x" +
                          std::to_string(grid) + " patch grid");
    }
    const std::size_t query_index = query_row * grid + query_col + 1;
    const FeatureKind kind = parse_feature_kind(encoder.feature);
    const ForwardOptions fwd{encoder.tap_final_norm};

    auto [map, delta] = with_precision(encoder.precision, [&]<Real T>() {
      const WeightBundle<T> w = w32.template cast<T>();
      const Tensor<T> img = load_image<T>(image_path, w.config, !encoder.no_crop);
      SimilarityMap a = similarity_map(img, w, layer, kind, query_index, fwd);
      std::optional<HeatmapDelta> d;
      if (!compare_path.empty()) {
        const Tensor<T> other = load_image<T>(compare_path, w.config, !encoder.no_crop);
        d = heatmap_delta(a, similarity_map(other, w, layer, kind, query_index, fwd));
      }
      return std::pair{std::move(a), std::move(d)};
    });

    write_pgm(map.values, grid, sibling(out_prefix, ".pgm"));
    write_text(sibling(out_prefix, ".csv"), csv(map.values, grid));
    json summary{{"grid", grid},
                 {"query_row", query_row},
                 {"query_col", query_col},
                 {"query_index", query_index},
                 {"query_value", map.values[query_index - 1]},
                 {"layer", layer},
                 {"feature", to_string(kind)}};
    if (delta) {
      summary["mean_delta"] = delta->mean;
      write_text(sibling(out_prefix, "_delta.csv"), csv(delta->values, grid));
    }
    const std::string text = summary.dump(2) + "\n";
    write_text(sibling(out_prefix, ".json"), text);
    out << text;

    Manifest m;
    m.command = "heatmap";
    m.args = {"heatmap", image_path, "--query-row", std::to_string(query_row), "--query-col",
              std::to_string(query_col), "--layer", std::to_string(layer)};
    encoder.append_args(m.args);
    m.config = {{"layer", layer},       {"feature", to_string(kind)},
                {"precision", encoder.precision}, {"crop", !encoder.no_crop},
                {"tap_final_norm", encoder.tap_final_norm}, {"mask_ratio", 0.0},
                {"similarity", "cosine"}, {"pgm_mapping", "round((s + 1) / 2 * 255)"}};
    m.add_input("image", image_path);
    m.add_input("weights", encoder.weights);
    if (!compare_path.empty()) {
      m.args.insert(m.args.end(), {"--compare", compare_path});
      m.add_input("compare", compare_path);
      m.outputs["delta_csv"] = out_prefix + "_delta.csv";
    }
    m.args.insert(m.args.end(), {"--out-prefix", out_prefix});
    m.outputs["pgm"] = out_prefix + ".pgm";
    m.outputs["csv"] = out_prefix + ".csv";
    m.outputs["summary"] = out_prefix + ".json";
    m.output_flags.push_back("--out-prefix");
    m.write(!manifest_path.empty() ? fs::path(manifest_path) : sibling(out_prefix, ".manifest.json"));
    return kOk;
  }
};

struct OptimizeCommand {
  std::string init_path, target_path, out_prefix, manifest_path;
  std::size_t steps = 200;
  double step_size = 0.0;
  LossFlags flags;

  void add(CLI::App& app) {
    CLI::App* sub = app.add_subcommand("optimize", "gradient descent on pixels toward a target");
    sub->add_option("init", init_path, "starting image")->required();
    sub->add_option("target", target_path, "reference image")->required();
    sub->add_option("--steps", steps, "number of updates")->required();
    sub->add_option("--step-size", step_size, "gradient descent step")->required();
    sub->add_option("--out-prefix", out_prefix,
                    "writes <prefix>.png, <prefix>_trace.csv, <prefix>.json")
        ->required();
    sub->add_option("--manifest", manifest_path, "manifest path (default <prefix>.manifest.json)");
    flags.add(sub);
  }

  int exec(std::ostream& out) const {
    if (steps < 1) throw ContractError("--steps must be >= 1");
    if (!(step_size > 0.0)) throw ContractError("--step-size must be positive");
    const LossConfig cfg = flags.resolve();
    const WeightBundle<float> w32 = weights::load(flags.encoder.weights);
    cfg.validate(w32.config);

    struct Outcome {
      Tensor<double> image;
      std::vector<TraceRow> trace;
      bool diverged;
    };
    const Outcome result = with_precision(flags.encoder.precision, [&]<Real T>() {
      const WeightBundle<T> w = w32.template cast<T>();
      const Tensor<T> x0 = load_image<T>(init_path, w.config, !flags.encoder.no_crop);
      const Tensor<T> y = load_image<T>(target_path, w.config, !flags.encoder.no_crop);
      require_same_shape(x0, y, "optimize images");
      OptimizeResult<T> r = optimize_pixels(x0, y, w, cfg, steps, step_size);
      return Outcome{r.image.template cast<double>(), std::move(r.trace), r.diverged};
    });

    image::write_png(result.image, sibling(out_prefix, ".png"), 16);
    std::string csv = "step,deblur,percep,total,psnr\n";
    for (const TraceRow& row : result.trace) {
      csv += std::to_string(row.step) + "," + fmt_double(row.deblur) + "," +
             fmt_double(row.percep) + "," + fmt_double(row.total) + "," +
             (psnr_identical(row.psnr) ? std::string("identical") : fmt_double(row.psnr)) + "\n";
    }
    write_text(sibling(out_prefix, "_trace.csv"), csv);

    json summary{{"steps", steps},
                 {"step_size", step_size},
                 {"diverged", result.diverged},
                 {"completed_steps", result.trace.empty() ? 0 : result.trace.back().step}};
    if (!result.trace.empty()) {
      summary["initial_total"] = result.trace.front().total;
      summary["final_total"] = result.trace.back().total;
      summary["initial_psnr"] = psnr_json(result.trace.front().psnr);
      summary["final_psnr"] = psnr_json(result.trace.back().psnr);
    }
    summary["config"] = loss_config_json(cfg, flags.encoder);
    const std::string text = summary.dump(2) + "\n";
    write_text(sibling(out_prefix, ".json"), text);
    out << text;

    Manifest m;
    m.command = "optimize";
    m.args = {"optimize", init_path, target_path, "--steps", std::to_string(steps),
              "--step-size", fmt_double(step_size)};
    flags.append_args(m.args, cfg);
    m.args.insert(m.args.end(), {"--out-prefix", out_prefix});
    m.config = loss_config_json(cfg, flags.encoder);
    m.config["steps"] = steps;
    m.config["step_size"] = step_size;
    m.config["optimizer"] = "gradient-descent";
    m.add_input("init", init_path);
    m.add_input("target", target_path);
    m.add_input("weights", flags.encoder.weights);
    m.outputs = {{"image", out_prefix + ".png"},
                 {"trace", out_prefix + "_trace.csv"},
                 {"summary", out_prefix + ".json"}};
    m.output_flags.push_back("--out-prefix");
    m.seed = cfg.seed;
    m.write(!manifest_path.empty() ? fs::path(manifest_path) : sibling(out_prefix, ".manifest.json"));
    return result.diverged ? kDiverged : kOk;
  }
};

struct GradcheckCommand {
  gradcheck::Options options;
  std::string precision, out_file, manifest_path;
  CLI::Option* threshold_opt = nullptr;

  void add(CLI::App& app) {
    CLI::App* sub = app.add_subcommand("gradcheck", "finite-difference check of loss gradients");
    sub->add_option("--instances", options.instances, "random instances per loss");
    sub->add_option("--seed", options.seed, "seed for toy weights and instances");
    sub->add_option("--step", options.step, "central difference step");
    threshold_opt = sub->add_option("--threshold", options.threshold,
                                    "max relative error (default 1e-4, 1e-6 with --precision f64)");
    sub->add_option("--precision", precision, "f64 forces the tight threshold; f32 is refused")
        ->check(CLI::IsMember({"f32", "f64"}));
    sub->add_flag("--corrupt-gradient", options.corrupt_gradient,
                  "test hook: perturb the analytic gradient");
    sub->add_option("--out", out_file, "also write the JSON report here");
    sub->add_option("--manifest", manifest_path, "manifest path (default <out>.manifest.json)");
  }

  int exec(std::ostream& out) {
    if (precision == "f32") {
      throw ContractError("gradcheck runs in 64-bit only; finite differences are meaningless in f32");
    }
    if (precision == "f64" && threshold_opt->count() == 0) options.threshold = 1e-6;
    if (options.instances < 1) throw ContractError("--instances must be >= 1");

    const auto checks = gradcheck::run(options);
    bool all = true;
    json report = json::array();
    for (const auto& c : checks) {
      char line[160];
      std::snprintf(line, sizeof line, "%-6s max_rel_error=%.3e threshold=%.0e instances=%zu %s\n",
                    std::string(to_string(c.kind)).c_str(), c.max_rel_error, c.threshold,
                    c.instances, c.passed ? "PASS" : "FAIL");
      out << line;
      all = all && c.passed;
      report.push_back({{"loss", to_string(c.kind)},
                        {"max_rel_error", c.max_rel_error},
                        {"threshold", c.threshold},
                        {"instances", c.instances},
                        {"passed", c.passed}});
    }

    Manifest m;
    m.command = "gradcheck";
    m.args = {"gradcheck", "--instances", std::to_string(options.instances), "--seed",
              std::to_string(options.seed), "--step", fmt_double(options.step), "--threshold",
              fmt_double(options.threshold)};
    if (!precision.empty()) m.args.insert(m.args.end(), {"--precision", precision});
    if (options.corrupt_gradient) m.args.push_back("--corrupt-gradient");
    m.config = {{"instances", options.instances},
                {"step", options.step},
                {"threshold", options.threshold},
                {"relative_floor", gradcheck::kRelativeFloor},
                {"encoder", weights::config_to_json(gradcheck::toy_config())}};
    m.seed = options.seed;
    if (!out_file.empty()) {
      write_text(out_file, json{{"checks", report}, {"passed", all}}.dump(2) + "\n");
      m.args.insert(m.args.end(), {"--out", out_file});
      m.outputs["report"] = out_file;
      m.output_flags.push_back("--out");
    }
    const std::string mpath =
        !manifest_path.empty() ? manifest_path : (out_file.empty() ? "" : out_file + ".manifest.json");
    if (!mpath.empty()) m.write(mpath);
    return all ? kOk : kGradcheckFailed;
  }
};

struct GenToyCommand {
  ViTConfig config;
  std::string flavor = "mae", out_file, manifest_path;
  std::uint64_t seed = 0;
  bool no_final_norm = false;

  GenToyCommand() {
    config.image_size = 32;
    config.patch_size = 4;
    config.embed_dim = 16;
    config.num_layers = 6;
    config.num_heads = 2;
  }

  void add(CLI::App& app) {
    CLI::App* sub = app.add_subcommand("gen-toy", "write deterministic toy weights");
    sub->add_option("--image-size", config.image_size, "input side in pixels");
    sub->add_option("--patch-size", config.patch_size, "patch side in pixels");
    sub->add_option("--channels", config.channels, "input channels");
    sub->add_option("--dim", config.embed_dim, "embedding width d");
    sub->add_option("--layers", config.num_layers, "transformer layers L");
    sub->add_option("--heads", config.num_heads, "attention heads");
    sub->add_option("--mlp-ratio", config.mlp_ratio, "MLP hidden width / d");
    sub->add_option("--ln-eps", config.ln_eps, "LayerNorm epsilon");
    sub->add_option("--flavor", flavor, "supervised-vit | dino | mae")
        ->check(CLI::IsMember({"supervised-vit", "dino", "mae"}));
    sub->add_flag("--no-final-norm", no_final_norm, "omit the final LayerNorm");
    sub->add_option("--seed", seed, "PRNG seed");
    sub->add_option("--out", out_file, "output VPW1 path")->required();
    sub->add_option("--manifest", manifest_path, "manifest path (default <out>.manifest.json)");
  }

  int exec(std::ostream& out) {
    config.flavor = parse_flavor(flavor);
    config.final_norm = !no_final_norm;
    if (config.channels != 3) {
      // ImageNet constants only exist for RGB; other channel counts get a
      // plain [0, 1] -> [-1, 1] mapping.
      config.norm_mean.assign(config.channels, 0.5);
      config.norm_std.assign(config.channels, 0.5);
    }
    config.validate();
    weights::save(weights::generate_toy(config, seed), out_file);

    Manifest m;
    m.command = "gen-toy";
    m.args = {"gen-toy",      "--image-size", std::to_string(config.image_size),
              "--patch-size", std::to_string(config.patch_size),
              "--channels",   std::to_string(config.channels),
              "--dim",        std::to_string(config.embed_dim),
              "--layers",     std::to_string(config.num_layers),
              "--heads",      std::to_string(config.num_heads),
              "--mlp-ratio",  fmt_double(config.mlp_ratio),
              "--ln-eps",     fmt_double(config.ln_eps),
              "--flavor",     flavor,
              "--seed",       std::to_string(seed)};
    if (no_final_norm) m.args.push_back("--no-final-norm");
    m.args.insert(m.args.end(), {"--out", out_file});
    m.config = weights::config_to_json(config);
    m.config["generator"] = "xoshiro256**, uniform [-0.02, 0.02), LayerNorm gains 1 + that";
    m.outputs["weights"] = out_file;
    m.output_flags.push_back("--out");
    m.seed = seed;
    m.write(!manifest_path.empty() ? fs::path(manifest_path) : fs::path(out_file + ".manifest.json"));
    out << json{{"weights", out_file}, {"config", m.config}}.dump(2) << "\n";
    return kOk;
  }
};

struct ReplayCommand {
  std::string manifest_path, out_dir;

  void add(CLI::App& app) {
    CLI::App* sub = app.add_subcommand("replay", "re-run a command from its manifest");
    sub->add_option("manifest", manifest_path, "manifest JSON")->required();
    sub->add_option("--out-dir", out_dir, "write outputs here instead of the recorded paths");
  }

  int exec(std::ostream& out, std::ostream& err) const {
    json m;
    try {
      m = json::parse(read_text(manifest_path));
    } catch (const json::exception& e) {
      throw ContractError("manifest is not valid JSON: " + std::string(e.what()));
    }
    if (!m.is_object() || m.value("tool", "") != "vitloss" || !m.contains("args") ||
        !m["args"].is_array()) {
      throw ContractError("'" + manifest_path + "' is not a vitloss manifest");
    }
    for (const json& input : m.value("inputs", json::array())) {
      const std::string path = input.at("path").get<std::string>();
      if (sha256_file(path) != input.at("sha256").get<std::string>()) {
        throw ContractError("input '" + path + "' changed since the manifest was written");
      }
    }
    std::vector<std::string> args = m["args"].get<std::vector<std::string>>();
    if (!args.empty() && args.front() == "replay") throw ContractError("cannot replay a replay");
    if (!out_dir.empty()) {
      fs::create_directories(out_dir);
      const auto flags = m.value("output_flags", std::vector<std::string>{});
      for (std::size_t i = 0; i + 1 < args.size(); ++i) {
        if (std::find(flags.begin(), flags.end(), args[i]) != flags.end()) {
          args[i + 1] = (fs::path(out_dir) / fs::path(args[i + 1]).filename()).string();
        }
      }
    }
    return run(std::move(args), out, err);
  }
};

}  // namespace

int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"vitloss: transformer-feature perceptual losses", "vitloss"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  LossCommand loss;
  HeatmapCommand heatmap;
  OptimizeCommand optimize;
  GradcheckCommand gradcheck_cmd;
  GenToyCommand gen_toy;
  ReplayCommand replay;
  loss.add(app);
  heatmap.add(app);
  optimize.add(app);
  gradcheck_cmd.add(app);
  gen_toy.add(app);
  replay.add(app);

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << "\n";
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kContractViolation;
  }

  try {
    if (app.got_subcommand("loss")) return loss.exec(out);
    if (app.got_subcommand("heatmap")) return heatmap.exec(out);
    if (app.got_subcommand("optimize")) return optimize.exec(out);
    if (app.got_subcommand("gradcheck")) return gradcheck_cmd.exec(out);
    if (app.got_subcommand("gen-toy")) return gen_toy.exec(out);
    if (app.got_subcommand("replay")) return replay.exec(out, err);
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kIoFailure;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kIoFailure;
  } catch (const CorruptionError& e) {
    err << "corrupt file: " << e.what() << "\n";
    return kIoFailure;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kDiverged;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kContractViolation;
  } catch (const fs::filesystem_error& e) {
    err << "I/O error: " << e.what() << "\n";
    return kIoFailure;
  }
  return kContractViolation;
}

}  // namespace vitloss::cli
