#include "cli.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "batmil/bench.hpp"
#include "batmil/binio.hpp"
#include "batmil/checkpoint.hpp"
#include "batmil/data.hpp"
#include "batmil/moe.hpp"
#include "batmil/simd.hpp"
#include "batmil/tiles.hpp"
#include "batmil/train.hpp"

namespace batmil::cli {
namespace {

namespace fs = std::filesystem;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void write_or_print(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    binio::write_text_atomic(path, text);
  }
}

std::vector<std::size_t> select_split(const data::Manifest& m, const std::string& split) {
  if (split == "all") {
    std::vector<std::size_t> idx(m.entries.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return idx;
  }
  auto idx = m.indices_with_split(split);
  if (idx.empty()) throw ConfigError("manifest has no entries with split '" + split + "'");
  return idx;
}

// --- subcommands ------------------------------------------------------------------

struct SynthOpts {
  data::SynthConfig cfg;
  std::size_t folds = 5;
  std::string out;
};

int cmd_synth(const SynthOpts& o, std::ostream& out) {
  const data::SynthSet set = data::synth_bags(o.cfg);
  data::Manifest m = data::write_synth(set, o.out);
  if (o.folds > 0) {
    m = data::with_folds(m, data::kfold_split(m, o.folds, o.cfg.seed));
    data::write_manifest(fs::path(o.out) / "manifest.tsv", m);
  }
  std::string wit = "bag\twitness_instances\n";
  for (std::size_t b = 0; b < set.bags.size(); ++b) {
    wit += set.bags[b].bag_id + "\t";
    bool first = true;
    for (std::size_t i = 0; i < set.witness[b].size(); ++i) {
      if (!set.witness[b][i]) continue;
      wit += (first ? "" : ",") + std::to_string(i);
      first = false;
    }
    wit += "\n";
  }
  binio::write_text_atomic(fs::path(o.out) / "witness.tsv", wit);
  out << "wrote " << set.bags.size() << " bags and manifest.tsv to " << o.out << "\n";
  return kExitOk;
}

struct TilesOpts {
  std::string input, out, report;
};

int cmd_tiles(const TilesOpts& o, std::ostream& out, std::ostream& err) {
  const tiles::RgbImage img = tiles::read_png(o.input);
  const tiles::PipelineResult res = tiles::run_pipeline(img);
  if (!res.warning.empty()) err << "warning: " << res.warning << "\n";
  fs::create_directories(o.out);
  std::size_t k = 0;
  std::string report = tiles::report_header();
  for (const auto& r : res.reports) {
    report += tiles::report_row(r);
    if (r.verdict == tiles::Verdict::keep) {
      char name[64];
      std::snprintf(name, sizeof name, "tile_r%03zu_c%03zu.png", r.row, r.col);
      tiles::write_png(fs::path(o.out) / name, res.kept[k++]);
    }
  }
  write_or_print(o.report, report, out);
  out << "otsu threshold " << res.threshold << "; kept " << res.kept.size() << " of " << res.reports.size()
      << " tiles\n";
  return kExitOk;
}

struct TrainOpts {
  std::string manifest, config, out, log, holdout;
  std::uint64_t seed = 0;
};

train::TrainConfig load_config(const std::string& path) {
  return path.empty() ? train::TrainConfig{} : train::read_train_config(path);
}

int cmd_train(const TrainOpts& o, std::ostream& out) {
  train::TrainConfig cfg = load_config(o.config);
  if (!o.holdout.empty()) cfg.holdout = o.holdout;
  const data::Manifest m = data::read_manifest(o.manifest);
  std::ofstream log_file;
  std::ostream* log = nullptr;
  if (!o.log.empty()) {
    log_file.open(o.log, std::ios::trunc);
    if (!log_file) throw std::runtime_error("cannot write log " + o.log);
    log = &log_file;
  }
  train::TrainResult res = train::train_loop(m, cfg, o.seed, log);
  model::checkpoint_save(res.params, o.out);
  out << "trained on " << res.n_train << " bags for " << res.epochs.size() << " epochs";
  if (!res.epochs.empty()) out << "; final train_loss " << fmt(res.epochs.back().train_loss);
  out << "; checkpoint " << o.out << "\n";
  return kExitOk;
}

struct EvalOpts {
  std::string manifest, ckpt, split = "test", report;
};

int cmd_eval(const EvalOpts& o, std::ostream& out) {
  const data::Manifest m = data::read_manifest(o.manifest);
  const model::BatmilParams params = model::checkpoint_load(o.ckpt);
  data::require_labels(m, params.config.n_classes);
  const auto bags = data::load_bags(m, select_split(m, o.split));
  write_or_print(o.report, metrics::to_json(train::evaluate_bags(params, bags, o.split)), out);
  return kExitOk;
}

struct SweepOpts {
  std::string values = "0.05,0.075,0.1,0.2";
  std::string manifest, config, holdout = "fold0", out_dir, table;
  std::uint64_t seed = 0;
};

std::vector<double> parse_reals(const std::string& list) {
  std::vector<double> v;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument("x");
    } catch (const std::exception&) {
      throw CLI::ValidationError("--values", "not a number: '" + item + "'");
    }
  }
  if (v.empty()) throw CLI::ValidationError("--values", "empty list");
  return v;
}

int cmd_sweep(const SweepOpts& o, std::ostream& out, std::ostream& err) {
  const std::vector<double> values = parse_reals(o.values);
  const train::TrainConfig base = load_config(o.config);
  const data::Manifest m = data::read_manifest(o.manifest);
  if (m.indices_with_split(o.holdout).empty()) throw ConfigError("manifest has no entries in holdout split '" + o.holdout + "'");
  if (!o.out_dir.empty()) fs::create_directories(o.out_dir);
  std::string table = "curvature\tfusion_mode\tepochs\tinitial_train_loss\tfinal_train_loss\tval_auroc\tval_accuracy\tval_f1_macro\tn_val\n";
  for (double c : values) {
    train::TrainConfig cfg = base;
    cfg.model.curvature = c;
    cfg.holdout = o.holdout;
    train::TrainResult res = train::train_loop(m, cfg, o.seed);
    const std::string tag = "c" + fmt(c);
    if (!o.out_dir.empty()) {
      model::checkpoint_save(res.params, fs::path(o.out_dir) / (tag + ".bmil"));
      std::string log = train::log_header(true);
      for (const auto& e : res.epochs) log += train::log_row(e);
      binio::write_text_atomic(fs::path(o.out_dir) / (tag + ".log.tsv"), log);
    }
    const auto report = train::evaluate_bags(res.params, data::load_bags(m, m.indices_with_split(o.holdout)), o.holdout);
    const double first = res.epochs.empty() ? NAN : res.epochs.front().train_loss;
    const double last = res.epochs.empty() ? NAN : res.epochs.back().train_loss;
    table += fmt(c) + "\t" + model::to_string(cfg.model.fusion_mode) + "\t" + std::to_string(cfg.epochs) + "\t" +
             fmt(first) + "\t" + fmt(last) + "\t" + (report.auroc ? fmt(*report.auroc) : "nan") + "\t" +
             fmt(report.accuracy) + "\t" + fmt(report.f1_macro) + "\t" + std::to_string(report.n_eval) + "\n";
    err << "curvature " << c << " done\n";
  }
  write_or_print(o.table, table, out);
  return kExitOk;
}

struct RouteOpts {
  std::string manifest, ckpt, split = "all", probs, records;
  std::size_t top_k = 2;
};

int cmd_route_stats(const RouteOpts& o, std::ostream& out) {
  if (!o.probs.empty()) {
    const auto p = parse_reals(o.probs);
    const moe::RoutingRecord r = moe::topk_renormalize(p, o.top_k);
    out << "expert\tdense_prob\trenormalized\n";
    for (std::size_t i = 0; i < r.experts.size(); ++i)
      out << r.experts[i] << "\t" << fmt(p[r.experts[i]]) << "\t" << fmt(r.weights[i]) << "\n";
    if (o.manifest.empty()) return kExitOk;
    out << "\n";
  }
  if (o.manifest.empty() || o.ckpt.empty()) throw CLI::RequiredError("--manifest and --ckpt");
  const data::Manifest m = data::read_manifest(o.manifest);
  const model::BatmilParams params = model::checkpoint_load(o.ckpt);
  data::require_labels(m, params.config.n_classes);
  const auto bags = data::load_bags(m, select_split(m, o.split));
  const std::size_t n_blocks = params.config.n_blocks, k = params.config.k_experts;

  std::vector<std::vector<moe::RoutingRecord>> per_block(n_blocks);
  std::string rec_tsv = "bag\tblock\ttoken\texperts\tweights\tprobs\n";
  Rng rng(0);
  for (const auto& bag : bags) {
    auto fr = model::batmil_forward(bag, params, Mode::eval, rng);
    const std::size_t n = bag.features.rows;
    for (std::size_t i = 0; i < fr.records.size(); ++i) {
      const std::size_t block = i / n;
      auto& r = fr.records[i];
      if (!o.records.empty()) {
        auto join = [](const auto& v) {
          std::string s;
          for (std::size_t j = 0; j < v.size(); ++j) {
            if (j) s += ",";
            if constexpr (std::is_floating_point_v<std::decay_t<decltype(v[j])>>) {
              s += fmt(v[j]);
            } else {
              s += std::to_string(v[j]);
            }
          }
          return s;
        };
        rec_tsv += bag.bag_id + "\t" + std::to_string(block) + "\t" + std::to_string(i % n) + "\t" + join(r.experts) +
                   "\t" + join(r.weights) + "\t" + join(r.probs) + "\n";
      }
      per_block[block].push_back(std::move(r));
    }
  }
  if (!o.records.empty()) binio::write_text_atomic(o.records, rec_tsv);

  out << "block\texpert\tfraction\timportance\n";
  std::string aux_rows;
  for (std::size_t b = 0; b < n_blocks; ++b) {
    const auto s = moe::load_balance_stats(per_block[b], k);
    for (std::size_t e = 0; e < k; ++e) out << b << "\t" << e << "\t" << fmt(s.fraction[e]) << "\t" << fmt(s.importance[e]) << "\n";
    aux_rows += std::to_string(b) + "\t" + fmt(s.aux_loss) + "\n";
  }
  out << "\nblock\taux_loss\n" << aux_rows;

  out << "\nroute\tauroc\taccuracy\tf1_macro\tn_eval\n";
  auto row = [&](const std::string& name, const metrics::EvalReport& r) {
    out << name << "\t" << (r.auroc ? fmt(*r.auroc) : "nan") << "\t" << fmt(r.accuracy) << "\t" << fmt(r.f1_macro) << "\t"
        << r.n_eval << "\n";
  };
  row("top" + std::to_string(params.config.top_k), train::evaluate_bags(params, bags, o.split));
  for (std::size_t e = 0; e < k; ++e) row("expert" + std::to_string(e), train::evaluate_bags(params, bags, o.split, e));
  return kExitOk;
}

struct SaliencyOpts {
  std::string bag, ckpt, out;
};

int cmd_saliency(const SaliencyOpts& o, std::ostream& out) {
  const model::BatmilParams params = model::checkpoint_load(o.ckpt);
  const model::BagFeatures bag = data::read_fbag(o.bag);
  const auto s = model::saliency(bag, params);
  std::string text = "instance\tscore\n";
  for (std::size_t i = 0; i < s.size(); ++i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%zu\t%.9g\n", i, s[i]);
    text += buf;
  }
  write_or_print(o.out, text, out);
  return kExitOk;
}

struct BenchOpts {
  std::string lengths = "1024,2048,4096,8192", out;
  std::size_t runs = 20, channels = 8;
};

int cmd_bench(const BenchOpts& o, std::ostream& out) {
  std::vector<std::size_t> lengths;
  for (double v : parse_reals(o.lengths)) {
    if (!(v >= 1) || v != std::floor(v)) throw CLI::ValidationError("--lengths", "lengths must be positive integers");
    lengths.push_back(static_cast<std::size_t>(v));
  }
  if (o.runs == 0) throw CLI::ValidationError("--runs", "must be positive");
  const auto rows = bench::kernel_bench(lengths, o.runs, o.channels);
  write_or_print(o.out, "# kernels: " + std::string(simd::kernels().name) + "\n" + bench::format_table(rows), out);
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bag-level WSI classifier toolkit"};
  app.require_subcommand(1);

  SynthOpts synth;
  auto* s = app.add_subcommand("synth", "Generate synthetic hierarchical feature bags");
  s->add_option("--bags", synth.cfg.n_bags, "Number of bags")->capture_default_str();
  s->add_option("--bag-size", synth.cfg.bag_size, "Instances per bag")->capture_default_str();
  s->add_option("--dim", synth.cfg.dim, "Feature dimension")->capture_default_str();
  s->add_option("--witness-rate", synth.cfg.witness_rate, "Witness fraction in positive bags")->capture_default_str();
  s->add_option("--sep", synth.cfg.separation, "Cluster separation s")->capture_default_str();
  s->add_option("--depth", synth.cfg.depth, "Cluster tree depth")->capture_default_str();
  s->add_option("--seed", synth.cfg.seed, "Seed")->capture_default_str();
  s->add_option("--folds", synth.folds, "Stratified folds written as fold0..foldK-1 splits (0 = all train)")
      ->check(CLI::Range(0, 5))
      ->capture_default_str();
  s->add_option("--out", synth.out, "Output directory")->required();

  TilesOpts tl;
  auto* t = app.add_subcommand("tiles", "Grid, Otsu mask and quality filters on an RGB raster");
  t->add_option("--input", tl.input, "PNG raster")->required()->check(CLI::ExistingFile);
  t->add_option("--out", tl.out, "Directory for kept tiles")->required();
  t->add_option("--report", tl.report, "TileReport TSV (default stdout)");

  TrainOpts tr;
  auto* trn = app.add_subcommand("train", "Train on a manifest");
  trn->add_option("--manifest", tr.manifest)->required()->check(CLI::ExistingFile);
  trn->add_option("--config", tr.config, "key=value config file")->check(CLI::ExistingFile);
  trn->add_option("--seed", tr.seed)->capture_default_str();
  trn->add_option("--out", tr.out, "Checkpoint path")->required();
  trn->add_option("--log", tr.log, "Per-epoch TSV log");
  trn->add_option("--holdout", tr.holdout, "Split to hold out and evaluate each epoch");

  EvalOpts ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest split");
  e->add_option("--manifest", ev.manifest)->required()->check(CLI::ExistingFile);
  e->add_option("--ckpt", ev.ckpt)->required()->check(CLI::ExistingFile);
  e->add_option("--split", ev.split, "Split name or 'all'")->capture_default_str();
  e->add_option("--report", ev.report, "JSON report path (default stdout)");

  SweepOpts sw;
  auto* sc = app.add_subcommand("sweep-c", "Train and evaluate once per curvature");
  sc->add_option("--values", sw.values, "Comma-separated curvatures")->capture_default_str();
  sc->add_option("--manifest", sw.manifest)->required()->check(CLI::ExistingFile);
  sc->add_option("--config", sw.config)->check(CLI::ExistingFile);
  sc->add_option("--seed", sw.seed)->capture_default_str();
  sc->add_option("--holdout", sw.holdout, "Evaluation split")->capture_default_str();
  sc->add_option("--out-dir", sw.out_dir, "Per-point checkpoints and logs");
  sc->add_option("--table", sw.table, "Result table TSV (default stdout)");

  RouteOpts rt;
  auto* rs = app.add_subcommand("route-stats", "Expert load balance and per-expert evaluation");
  rs->add_option("--manifest", rt.manifest)->check(CLI::ExistingFile);
  rs->add_option("--ckpt", rt.ckpt)->check(CLI::ExistingFile);
  rs->add_option("--split", rt.split, "Split name or 'all'")->capture_default_str();
  rs->add_option("--probs", rt.probs, "Dense gate probabilities to renormalize, comma-separated");
  rs->add_option("--top-k", rt.top_k, "top_k for --probs")->capture_default_str();
  rs->add_option("--records", rt.records, "Per-token routing records TSV");

  SaliencyOpts sa;
  auto* sl = app.add_subcommand("saliency", "Per-instance max-pool provenance scores");
  sl->add_option("--bag", sa.bag)->required()->check(CLI::ExistingFile);
  sl->add_option("--ckpt", sa.ckpt)->required()->check(CLI::ExistingFile);
  sl->add_option("--out", sa.out, "TSV path (default stdout)");

  BenchOpts bo;
  auto* kb = app.add_subcommand("kernel-bench", "FFT convolution vs recurrent scan timings");
  kb->add_option("--lengths", bo.lengths)->capture_default_str();
  kb->add_option("--runs", bo.runs)->capture_default_str();
  kb->add_option("--channels", bo.channels)->capture_default_str();
  kb->add_option("--out", bo.out, "TSV path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& pe) {
    return app.exit(pe, out, err) == 0 ? kExitOk : kExitUsage;
  }
  try {
    if (s->parsed()) return cmd_synth(synth, out);
    if (t->parsed()) return cmd_tiles(tl, out, err);
    if (trn->parsed()) return cmd_train(tr, out);
    if (e->parsed()) return cmd_eval(ev, out);
    if (sc->parsed()) return cmd_sweep(sw, out, err);
    if (rs->parsed()) return cmd_route_stats(rt, out);
    if (sl->parsed()) return cmd_saliency(sa, out);
    if (kb->parsed()) return cmd_bench(bo, out);
  } catch (const CLI::Error& ce) {
    err << "error: " << ce.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace batmil::cli
