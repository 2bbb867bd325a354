#include "batmil/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "batmil/ops.hpp"

namespace batmil::train {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_real(const std::string& v, const std::string& where) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(d)) throw std::invalid_argument("x");
    return d;
  } catch (const std::exception&) {
    throw ConfigError(where + "expected a real number, got '" + v + "'");
  }
}

std::size_t parse_count(const std::string& v, const std::string& where) {
  std::size_t out = 0;
  const auto* end = v.data() + v.size();
  const auto res = std::from_chars(v.data(), end, out);
  if (res.ec != std::errc() || res.ptr != end) throw ConfigError(where + "expected a non-negative integer, got '" + v + "'");
  return out;
}

std::vector<double> softmax(const std::vector<double>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] = std::exp(logits[i] - mx);
  for (double& v : p) v /= s;
  return p;
}

}  // namespace

TrainConfig parse_train_config(const std::string& text, const std::string& source) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  auto& m = cfg.model;
  const std::map<std::string, Setter> setters = {
      {"preset",
       [&](const std::string& v, const std::string& w) {
         if (v == "toy") {
           m = model::ModelConfig::toy(0);
         } else if (v == "default") {
           m = model::ModelConfig{};
         } else {
           throw ConfigError(w + "preset must be toy or default");
         }
       }},
      {"d_model", [&](const std::string& v, const std::string& w) { m.d_model = parse_count(v, w); }},
      {"n_blocks", [&](const std::string& v, const std::string& w) { m.n_blocks = parse_count(v, w); }},
      {"n_state", [&](const std::string& v, const std::string& w) { m.n_state = parse_count(v, w); }},
      {"k_experts", [&](const std::string& v, const std::string& w) { m.k_experts = parse_count(v, w); }},
      {"top_k", [&](const std::string& v, const std::string& w) { m.top_k = parse_count(v, w); }},
      {"fusion_dim", [&](const std::string& v, const std::string& w) { m.fusion_dim = parse_count(v, w); }},
      {"curvature", [&](const std::string& v, const std::string& w) { m.curvature = parse_real(v, w); }},
      {"fusion_mode",
       [&](const std::string& v, const std::string& w) {
         try {
           m.fusion_mode = model::parse_fusion_mode(v);
         } catch (const ConfigError& e) {
           throw ConfigError(w + e.what());
         }
       }},
      {"n_classes", [&](const std::string& v, const std::string& w) { m.n_classes = parse_count(v, w); }},
      {"max_seq_len", [&](const std::string& v, const std::string& w) { m.max_seq_len = parse_count(v, w); }},
      {"hidden_mult", [&](const std::string& v, const std::string& w) { m.hidden_mult = parse_count(v, w); }},
      {"expert_dropout", [&](const std::string& v, const std::string& w) { m.expert_dropout = parse_real(v, w); }},
      {"drop_path_rate", [&](const std::string& v, const std::string& w) { m.drop_path_rate = parse_real(v, w); }},
      {"lr", [&](const std::string& v, const std::string& w) { cfg.lr = parse_real(v, w); }},
      {"lr_floor", [&](const std::string& v, const std::string& w) { cfg.lr_floor = parse_real(v, w); }},
      {"weight_decay", [&](const std::string& v, const std::string& w) { cfg.adam.weight_decay = parse_real(v, w); }},
      {"beta1", [&](const std::string& v, const std::string& w) { cfg.adam.beta1 = parse_real(v, w); }},
      {"beta2", [&](const std::string& v, const std::string& w) { cfg.adam.beta2 = parse_real(v, w); }},
      {"adam_eps", [&](const std::string& v, const std::string& w) { cfg.adam.eps = parse_real(v, w); }},
      {"aux_weight", [&](const std::string& v, const std::string& w) { cfg.aux_weight = parse_real(v, w); }},
      {"epochs", [&](const std::string& v, const std::string& w) { cfg.epochs = parse_count(v, w); }},
      {"batch_size", [&](const std::string& v, const std::string& w) { cfg.batch_size = parse_count(v, w); }},
      {"holdout",
       [&](const std::string& v, const std::string& w) {
         if (!v.empty() && !data::valid_split(v)) throw ConfigError(w + "unknown holdout split '" + v + "'");
         cfg.holdout = v;
       }},
  };
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError(where + "unknown key '" + key + "'");
    it->second(value, where);
  }
  if (cfg.batch_size == 0) throw ConfigError(source + ": batch_size must be positive");
  if (!(cfg.lr >= 0.0)) throw ConfigError(source + ": lr must be >= 0");
  return cfg;
}

TrainConfig read_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str(), path);
}

std::string log_header(bool with_val) {
  std::string h = "epoch\tlr\ttrain_loss\ttrain_acc";
  if (with_val) h += "\tval_loss\tval_acc\tval_auroc\tval_f1_macro";
  return h + "\n";
}

std::string log_row(const EpochLog& e) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu\t%.9g\t%.9g\t%.6f", e.epoch, e.lr, e.train_loss, e.train_acc);
  std::string row = buf;
  if (e.val) {
    const std::string au = e.val->auroc ? std::to_string(*e.val->auroc) : "nan";
    std::snprintf(buf, sizeof buf, "\t%.9g\t%.6f\t%s\t%.6f", e.val_loss, e.val->accuracy, au.c_str(), e.val->f1_macro);
    row += buf;
  }
  return row + "\n";
}

std::vector<std::vector<double>> predict_probs(const model::BatmilParams& params,
                                               const std::vector<model::BagFeatures>& bags,
                                               std::optional<std::size_t> forced_expert) {
  std::vector<std::vector<double>> out;
  out.reserve(bags.size());
  Rng rng(0);
  for (const auto& bag : bags) out.push_back(softmax(model::batmil_forward(bag, params, Mode::eval, rng, forced_expert).logits));
  return out;
}

metrics::EvalReport evaluate_bags(const model::BatmilParams& params, const std::vector<model::BagFeatures>& bags,
                                  const std::string& fold, std::optional<std::size_t> forced_expert) {
  std::vector<int> labels;
  for (const auto& b : bags) labels.push_back(b.label);
  return metrics::evaluate(predict_probs(params, bags, forced_expert), labels, params.config.n_classes, fold);
}

TrainResult train_loop(const std::vector<model::BagFeatures>& train_bags, const std::vector<model::BagFeatures>& val_bags,
                       const TrainConfig& config, std::uint64_t seed, std::ostream* log) {
  if (train_bags.empty()) throw ConfigError("train_loop: no training bags");
  model::ModelConfig mc = config.model;
  mc.d_in = train_bags.front().features.cols;
  mc.seed = seed;
  for (const auto* set : {&train_bags, &val_bags}) {
    for (const auto& b : *set) {
      if (b.features.cols != mc.d_in) throw ShapeError("train_loop: bag " + b.bag_id + " has a different feature width");
      if (b.label < 0 || static_cast<std::size_t>(b.label) >= mc.n_classes)
        throw ConfigError("train_loop: bag " + b.bag_id + " label outside [0, n_classes)");
    }
  }

  TrainResult res;
  res.params = model::init_model(mc);
  res.initial = res.params;
  res.n_train = train_bags.size();
  res.n_val = val_bags.size();
  auto named = model::named_tensors(res.params);
  optim::AdamW opt(config.adam);
  if (log) *log << log_header(!val_bags.empty()) << std::flush;

  std::vector<std::size_t> order(train_bags.size());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    EpochLog el;
    el.epoch = epoch;
    el.lr = optim::cosine_lr(epoch, config.epochs > 0 ? config.epochs - 1 : 0, config.lr, config.lr_floor);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = make_rng(seed, 0x73687566ULL, epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      ad::GradMap grads;
      // Bags are processed and reduced in batch order, so the summed gradient is reproducible.
      for (std::size_t i = start; i < end; ++i) {
        const auto& bag = train_bags[order[i]];
        Rng rng = make_rng(seed, 0x64726f70ULL, epoch, order[i]);
        ad::Tape tape;
        model::ForwardTrace trace;
        trace.compute_aux = config.aux_weight != 0.0;
        ad::Var logits = model::batmil_forward(tape, bag.features, res.params, Mode::train, rng, &trace);
        ad::Var loss = ops::cross_entropy(tape, logits, static_cast<std::size_t>(bag.label));
        const double ce = tape.value(loss).data[0];
        if (trace.compute_aux && trace.aux_loss.valid()) {
          loss = ops::add(tape, loss, ops::affine(tape, trace.aux_loss, config.aux_weight, 0.0));
        }
        tape.backward(loss, grads);
        loss_sum += ce;
        const auto& lv = tape.value(logits).data;
        correct += static_cast<std::size_t>(std::max_element(lv.begin(), lv.end()) - lv.begin()) ==
                   static_cast<std::size_t>(bag.label);
      }
      opt.step(named, grads, el.lr, 1.0 / static_cast<double>(end - start));
    }
    el.train_loss = loss_sum / static_cast<double>(order.size());
    el.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
    if (!val_bags.empty()) {
      const auto probs = predict_probs(res.params, val_bags);
      std::vector<int> labels;
      double vl = 0;
      for (std::size_t i = 0; i < val_bags.size(); ++i) {
        labels.push_back(val_bags[i].label);
        vl -= std::log(std::max(probs[i][static_cast<std::size_t>(val_bags[i].label)], 1e-300));
      }
      el.val_loss = vl / static_cast<double>(val_bags.size());
      el.val = metrics::evaluate(probs, labels, mc.n_classes, config.holdout);
    }
    if (log) *log << log_row(el) << std::flush;
    res.epochs.push_back(std::move(el));
  }
  return res;
}

TrainResult train_loop(const data::Manifest& manifest, const TrainConfig& config, std::uint64_t seed, std::ostream* log) {
  std::vector<std::size_t> train_idx, val_idx;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& split = manifest.entries[i].split;
    if (!config.holdout.empty() && split == config.holdout) {
      val_idx.push_back(i);
    } else if (split != "val" && split != "test") {
      train_idx.push_back(i);
    }
  }
  data::require_labels(manifest, config.model.n_classes);
  return train_loop(data::load_bags(manifest, train_idx), data::load_bags(manifest, val_idx), config, seed, log);
}

}  // namespace batmil::train
