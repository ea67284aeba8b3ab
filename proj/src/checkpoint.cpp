#include "jointctc/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace jointctc {

namespace {

constexpr char kMagic[8] = {'J', 'C', 'T', 'C', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& out, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(bytes, sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  char bytes[sizeof(T)];
  if (!in.read(bytes, sizeof(T))) throw CheckpointError("checkpoint truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

std::string get_string(std::istream& in, std::uint64_t length) {
  if (length > (1u << 30)) throw CheckpointError("checkpoint string length is implausible");
  std::string s(length, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(length)))
    throw CheckpointError("checkpoint truncated");
  return s;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& c) {
  nlohmann::json j = {
      {"task", to_string(c.task)},
      {"d_model", c.d_model},
      {"n_heads", c.n_heads},
      {"d_ff", c.d_ff},
      {"n_src_layers", c.n_src_layers},
      {"n_adjust_layers", c.n_adjust_layers},
      {"n_tgt_layers", c.n_tgt_layers},
      {"n_dec_layers", c.n_dec_layers},
      {"upsample_rate", c.upsample_rate},
      {"downsample_rate", c.downsample_rate},
      {"src_vocab", c.src_vocab},
      {"tgt_vocab", c.tgt_vocab},
      {"dropout", c.dropout},
      {"src_ctc_layer_index", c.src_ctc_layer_index},
  };
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  ModelConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    c.task = task_kind_from_string(j.at("task").get<std::string>());
    c.d_model = j.at("d_model").get<Index>();
    c.n_heads = j.at("n_heads").get<Index>();
    c.d_ff = j.at("d_ff").get<Index>();
    c.n_src_layers = j.at("n_src_layers").get<Index>();
    c.n_adjust_layers = j.at("n_adjust_layers").get<Index>();
    c.n_tgt_layers = j.at("n_tgt_layers").get<Index>();
    c.n_dec_layers = j.at("n_dec_layers").get<Index>();
    c.upsample_rate = j.at("upsample_rate").get<Index>();
    c.downsample_rate = j.at("downsample_rate").get<Index>();
    c.src_vocab = j.at("src_vocab").get<Index>();
    c.tgt_vocab = j.at("tgt_vocab").get<Index>();
    c.dropout = j.at("dropout").get<double>();
    c.src_ctc_layer_index = j.at("src_ctc_layer_index").get<Index>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad model config in checkpoint: ") + e.what());
  }
  c.validate();
  return c;
}

void write_checkpoint(std::ostream& out, const Model& model) {
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string config = model_config_to_json(model.config());
  put<std::uint64_t>(out, config.size());
  out.write(config.data(), static_cast<std::streamsize>(config.size()));
  put<std::uint64_t>(out, model.params().size());
  for (const auto& [name, tensor] : model.params()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, 2);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(tensor.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(tensor.cols()));
    const Matrix& v = tensor.value();
    for (Index i = 0; i < v.size(); ++i) put<double>(out, v.data()[i]);
  }
  if (!out) throw CheckpointError("failed writing checkpoint");
}

Model read_checkpoint(std::istream& in) {
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError("not a checkpoint (bad magic)");
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const ModelConfig config = model_config_from_json(get_string(in, get<std::uint64_t>(in)));
  const auto count = get<std::uint64_t>(in);
  ModelParams params;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = get_string(in, get<std::uint32_t>(in));
    const auto rank = get<std::uint32_t>(in);
    if (rank != 2) throw CheckpointError("parameter " + name + " has unsupported rank");
    const auto rows = get<std::uint64_t>(in);
    const auto cols = get<std::uint64_t>(in);
    if (rows * cols > (1ull << 32)) throw CheckpointError("parameter " + name + " is implausibly large");
    Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
    for (Index k = 0; k < m.size(); ++k) m.data()[k] = get<double>(in);
    params.add(name, std::move(m));
  }
  try {
    return Model(config, std::move(params));
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint does not match its config: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, model);
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace jointctc
