// SPDX-License-Identifier: Apache-2.0
#include "msvq/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

namespace msvq {

namespace {

constexpr char kMagic[8] = {'M', 'S', 'V', 'Q', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

template <class T>
struct NamedTensor {
  std::string name;
  const Tensor<T>* tensor;
};

template <class T>
Tensor<T> labels_tensor(const NegativeQueue<T>& q) {
  const auto l = q.labels();
  return Tensor<T>({l.size()}, std::vector<T>(l.begin(), l.end()));
}

template <class T>
void put_network(std::vector<std::pair<std::string, Tensor<T>>>& out, const std::string& prefix,
                 const Network<T>& net) {
  for (const auto& p : net.parameters()) out.emplace_back(prefix + "." + p.name, p.value);
}

template <class T>
std::vector<std::pair<std::string, Tensor<T>>> collect(const TrainState<T>& s) {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  put_network(out, "student", s.nets.student);
  put_network(out, "teacher1", s.nets.teacher1);
  put_network(out, "teacher2", s.nets.teacher2);
  out.emplace_back("queue1.matrix", s.queue1.as_matrix());
  out.emplace_back("queue2.matrix", s.queue2.as_matrix());
  if (s.queue1.has_labels()) out.emplace_back("queue1.labels", labels_tensor(s.queue1));
  if (s.queue2.has_labels()) out.emplace_back("queue2.labels", labels_tensor(s.queue2));
  const auto& params = s.nets.student.parameters();
  for (std::size_t k = 0; k < s.velocity.size(); ++k) {
    out.emplace_back("optimizer.velocity." + params.at(k).name, s.velocity[k]);
  }
  return out;
}

void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

struct RawCheckpoint {
  nlohmann::json header;
  std::string payload;
};

RawCheckpoint read_raw(const std::filesystem::path& path, bool with_payload) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointIoError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, 8)) throw CheckpointTruncatedError(path.string() + ": truncated before magic");
  if (std::memcmp(magic, kMagic, 8) != 0) {
    throw CheckpointVersionError(path.string() + ": not an msvq checkpoint (bad magic)");
  }
  std::uint32_t version = 0;
  if (!in.read(reinterpret_cast<char*>(&version), 4)) {
    throw CheckpointTruncatedError(path.string() + ": truncated before version");
  }
  if (version != kCheckpointVersion) {
    throw CheckpointVersionError(path.string() + ": format version " + std::to_string(version) +
                                 " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  std::uint64_t len = 0;
  if (!in.read(reinterpret_cast<char*>(&len), 8)) {
    throw CheckpointTruncatedError(path.string() + ": truncated before header length");
  }
  std::string header(len, '\0');
  if (len > (1ULL << 30) || !in.read(header.data(), static_cast<std::streamsize>(len))) {
    throw CheckpointTruncatedError(path.string() + ": truncated header");
  }
  RawCheckpoint raw;
  try {
    raw.header = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointVersionError(path.string() + ": unreadable header: " + e.what());
  }
  if (with_payload) raw.payload.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  return raw;
}

template <class Src, class T>
Tensor<T> decode(const std::string& payload, std::size_t& offset, const Shape& shape) {
  const std::size_t n = shape_numel(shape);
  std::vector<Src> buf(n);
  std::memcpy(buf.data(), payload.data() + offset, n * sizeof(Src));
  offset += n * sizeof(Src);
  return Tensor<T>(shape, std::vector<T>(buf.begin(), buf.end()));
}

}  // namespace

template <class T>
void save_checkpoint(const TrainState<T>& state, const std::filesystem::path& path) {
  const auto tensors = collect(state);
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& [name, t] : tensors) manifest.push_back({{"name", name}, {"shape", t.shape()}});
  nlohmann::json header{
      {"format", "msvq-checkpoint"},
      {"dtype", dtype_name<T>()},
      {"config", state.config},
      {"steps_per_epoch", state.steps_per_epoch},
      {"step", state.step},
      {"epoch", state.epoch},
      {"analysis_mode", state.analysis_mode},
      {"rng", {{"algorithm", SeededRng::kAlgorithm}, {"seed", state.config.seed}, {"augment_counter", state.step},
               {"shuffle_counter", state.epoch}}},
      {"normalization", {{"mean", state.normalization.mean}, {"std", state.normalization.stddev}}},
      {"tensors", manifest}};
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointIoError("cannot write checkpoint " + path.string());
  out.write(kMagic, 8);
  write_u32(out, kCheckpointVersion);
  write_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : tensors) {
    out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
  }
  if (!out) throw CheckpointIoError("write failed for checkpoint " + path.string());
}

nlohmann::json read_checkpoint_header(const std::filesystem::path& path) {
  return read_raw(path, false).header;
}

template <class T>
TrainState<T> load_checkpoint(const std::filesystem::path& path) {
  RawCheckpoint raw = read_raw(path, true);
  const auto& h = raw.header;
  TrainConfig cfg;
  ChannelStats norm;
  std::string dtype;
  std::size_t steps_per_epoch = 0;
  try {
    cfg = h.at("config").get<TrainConfig>();
    dtype = h.at("dtype").get<std::string>();
    steps_per_epoch = h.at("steps_per_epoch").get<std::size_t>();
    norm.mean = h.at("normalization").at("mean").get<std::vector<double>>();
    norm.stddev = h.at("normalization").at("std").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointVersionError(path.string() + ": malformed header: " + e.what());
  }
  if (dtype != "f32" && dtype != "f64") throw CheckpointVersionError(path.string() + ": unknown dtype " + dtype);
  const std::size_t width = dtype == "f32" ? 4 : 8;

  TrainState<T> state = TrainState<T>::initial(cfg, steps_per_epoch, norm);
  state.step = h.at("step").get<std::size_t>();
  state.epoch = h.at("epoch").get<std::size_t>();
  state.analysis_mode = h.value("analysis_mode", false);

  std::map<std::string, Tensor<T>> loaded;
  std::size_t offset = 0;
  for (const auto& entry : h.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const Shape shape = entry.at("shape").get<Shape>();
    const std::size_t bytes = shape_numel(shape) * width;
    if (offset + bytes > raw.payload.size()) {
      throw CheckpointTruncatedError(path.string() + ": payload ends inside tensor " + name);
    }
    loaded.emplace(name, width == 4 ? decode<float, T>(raw.payload, offset, shape)
                                    : decode<double, T>(raw.payload, offset, shape));
  }
  if (offset != raw.payload.size()) {
    throw CheckpointShapeError(path.string() + ": " + std::to_string(raw.payload.size() - offset) +
                               " unexpected trailing payload bytes");
  }

  auto take = [&](const std::string& name, const Shape& expected) -> Tensor<T> {
    auto it = loaded.find(name);
    if (it == loaded.end()) throw CheckpointShapeError(path.string() + ": missing tensor " + name);
    if (it->second.shape() != expected) {
      throw CheckpointShapeError(path.string() + ": tensor " + name + " has shape " +
                                 shape_str(it->second.shape()) + ", expected " + shape_str(expected));
    }
    return it->second;
  };
  auto restore = [&](const std::string& prefix, Network<T>& net) {
    for (auto& p : net.parameters()) p.value = take(prefix + "." + p.name, p.value.shape());
  };
  restore("student", state.nets.student);
  restore("teacher1", state.nets.teacher1);
  restore("teacher2", state.nets.teacher2);

  const Shape qshape{cfg.encoder.embed_dim, cfg.queue_size};
  auto queue_labels = [&](const std::string& name) {
    std::vector<std::int32_t> labels;
    if (loaded.count(name)) {
      const Tensor<T> l = take(name, {cfg.queue_size});
      for (T v : l.data()) labels.push_back(static_cast<std::int32_t>(v));
    }
    return labels;
  };
  state.queue1 = NegativeQueue<T>::from_matrix(take("queue1.matrix", qshape), queue_labels("queue1.labels"));
  state.queue2 = NegativeQueue<T>::from_matrix(take("queue2.matrix", qshape), queue_labels("queue2.labels"));

  for (auto& p : state.nets.student.parameters()) {
    const std::string name = "optimizer.velocity." + p.name;
    if (loaded.count(name)) state.velocity.push_back(take(name, p.value.shape()));
  }
  if (!state.velocity.empty() && state.velocity.size() != state.nets.student.parameters().size()) {
    throw CheckpointShapeError(path.string() + ": optimizer state is incomplete");
  }
  return state;
}

template void save_checkpoint(const TrainState<float>&, const std::filesystem::path&);
template void save_checkpoint(const TrainState<double>&, const std::filesystem::path&);
template TrainState<float> load_checkpoint(const std::filesystem::path&);
template TrainState<double> load_checkpoint(const std::filesystem::path&);

}  // namespace msvq
