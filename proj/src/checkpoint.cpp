#include "batmil/checkpoint.hpp"

#include <cstring>
#include <map>
#include <variant>

#include "batmil/binio.hpp"

namespace batmil::model {
namespace {

using Field = std::variant<std::uint64_t, double, std::string>;

std::vector<std::pair<std::string, Field>> config_fields(const ModelConfig& c) {
  return {
      {"d_in", std::uint64_t{c.d_in}},
      {"d_model", std::uint64_t{c.d_model}},
      {"n_blocks", std::uint64_t{c.n_blocks}},
      {"n_state", std::uint64_t{c.n_state}},
      {"k_experts", std::uint64_t{c.k_experts}},
      {"top_k", std::uint64_t{c.top_k}},
      {"fusion_dim", std::uint64_t{c.fusion_dim}},
      {"curvature", c.curvature},
      {"fusion_mode", to_string(c.fusion_mode)},
      {"n_classes", std::uint64_t{c.n_classes}},
      {"max_seq_len", std::uint64_t{c.max_seq_len}},
      {"seed", std::uint64_t{c.seed}},
      {"hidden_mult", std::uint64_t{c.hidden_mult}},
      {"expert_dropout", c.expert_dropout},
      {"drop_path_rate", c.drop_path_rate},
  };
}

ModelConfig config_from_fields(const std::map<std::string, Field>& f) {
  auto u = [&](const char* name) -> std::size_t {
    auto it = f.find(name);
    if (it == f.end() || !std::holds_alternative<std::uint64_t>(it->second))
      throw FormatError(std::string("checkpoint: missing integer config field ") + name);
    return static_cast<std::size_t>(std::get<std::uint64_t>(it->second));
  };
  auto d = [&](const char* name) -> double {
    auto it = f.find(name);
    if (it == f.end() || !std::holds_alternative<double>(it->second))
      throw FormatError(std::string("checkpoint: missing real config field ") + name);
    return std::get<double>(it->second);
  };
  ModelConfig c;
  c.d_in = u("d_in");
  c.d_model = u("d_model");
  c.n_blocks = u("n_blocks");
  c.n_state = u("n_state");
  c.k_experts = u("k_experts");
  c.top_k = u("top_k");
  c.fusion_dim = u("fusion_dim");
  c.curvature = d("curvature");
  auto fm = f.find("fusion_mode");
  if (fm == f.end() || !std::holds_alternative<std::string>(fm->second)) throw FormatError("checkpoint: missing fusion_mode");
  c.fusion_mode = parse_fusion_mode(std::get<std::string>(fm->second));
  c.n_classes = u("n_classes");
  c.max_seq_len = u("max_seq_len");
  c.seed = u("seed");
  c.hidden_mult = u("hidden_mult");
  c.expert_dropout = d("expert_dropout");
  c.drop_path_rate = d("drop_path_rate");
  return c;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(BatmilParams& params) {
  binio::ByteWriter w;
  w.bytes("BMIL", 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  const auto fields = config_fields(params.config);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(fields.size()));
  for (const auto& [name, value] : fields) {
    w.str16(name);
    if (const auto* u = std::get_if<std::uint64_t>(&value)) {
      w.put<std::uint8_t>(0);
      w.put<std::uint64_t>(*u);
    } else if (const auto* dv = std::get_if<double>(&value)) {
      w.put<std::uint8_t>(1);
      w.put<double>(*dv);
    } else {
      w.put<std::uint8_t>(2);
      w.str16(std::get<std::string>(value));
    }
  }
  const auto tensors = named_tensors(params);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const NamedTensor& nt : tensors) {
    w.str16(nt.name);
    w.put<std::uint8_t>(2);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(nt.tensor->rows));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(nt.tensor->cols));
    for (double v : nt.tensor->data) w.put<float>(static_cast<float>(v));
  }
  w.finish_crc();
  return w.buffer();
}

BatmilParams decode_checkpoint(const std::vector<std::uint8_t>& bytes, const ModelConfig* expected) {
  const std::size_t body = binio::check_crc(bytes, "checkpoint");
  binio::ByteReader r(bytes.data(), body, "checkpoint");
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "BMIL", 4) != 0) throw FormatError("checkpoint: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  std::map<std::string, Field> fields;
  const auto n_fields = r.get<std::uint16_t>();
  for (std::uint16_t i = 0; i < n_fields; ++i) {
    std::string name = r.str16();
    const auto tag = r.get<std::uint8_t>();
    switch (tag) {
      case 0: fields[name] = r.get<std::uint64_t>(); break;
      case 1: fields[name] = r.get<double>(); break;
      case 2: fields[name] = r.str16(); break;
      default: throw FormatError("checkpoint: unknown config field type for " + name);
    }
  }
  const ModelConfig config = config_from_fields(fields);
  if (expected != nullptr && !(*expected == config)) throw ConfigError("checkpoint: stored configuration differs from the expected one");

  // Parse everything before touching the model so a bad file never yields a partial load.
  std::map<std::string, Tensor> stored;
  const auto n_tensors = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = r.str16();
    const auto rank = r.get<std::uint8_t>();
    if (rank != 2) throw FormatError("checkpoint: tensor " + name + " has unsupported rank " + std::to_string(rank));
    const std::size_t rows = r.get<std::uint32_t>();
    const std::size_t cols = r.get<std::uint32_t>();
    if (rows * cols * 4 > r.remaining()) throw FormatError("checkpoint: truncated payload for " + name);
    Tensor t(rows, cols);
    for (double& v : t.data) v = static_cast<double>(r.get<float>());
    stored.emplace(std::move(name), std::move(t));
  }
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes before CRC");

  BatmilParams params = init_model(config);
  auto targets = named_tensors(params);
  if (targets.size() != stored.size()) throw FormatError("checkpoint: tensor count does not match configuration");
  for (NamedTensor& nt : targets) {
    auto it = stored.find(nt.name);
    if (it == stored.end()) throw FormatError("checkpoint: missing tensor " + nt.name);
    if (!it->second.same_shape(*nt.tensor)) throw FormatError("checkpoint: shape mismatch for " + nt.name);
    *nt.tensor = std::move(it->second);
  }
  for (auto& s4 : params.s4) s4.ssm.validate();
  return params;
}

void checkpoint_save(BatmilParams& params, const std::filesystem::path& path) {
  binio::write_file_atomic(path, encode_checkpoint(params));
}

BatmilParams checkpoint_load(const std::filesystem::path& path, const ModelConfig* expected) {
  return decode_checkpoint(binio::read_file(path), expected);
}

}  // namespace batmil::model
