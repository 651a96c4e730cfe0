// SPDX-License-Identifier: Apache-2.0
#include "detectlab/detector/checkpoint.hpp"

#include <array>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "detectlab/errors.hpp"
#include "detectlab/tensor_io.hpp"

namespace detectlab::detector {

namespace {

constexpr std::array<char, 4> kMagic{'D', 'L', 'C', 'K'};
constexpr std::uint8_t kVersion = 1;

void put_u32(std::ostream& os, std::size_t value) {
  if (value > std::numeric_limits<std::uint32_t>::max()) throw FormatError("checkpoint: length exceeds u32");
  for (int i = 0; i < 4; ++i) os.put(static_cast<char>((value >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  is.read(reinterpret_cast<char*>(b.data()), 4);
  if (!is) throw FormatError("checkpoint: truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::string get_bytes(std::istream& is, std::size_t n) {
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw FormatError("checkpoint: truncated file");
  return s;
}

nlohmann::json history_to_json(const std::vector<EpochLog>& history) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : history)
    rows.push_back({{"epoch", e.epoch}, {"box", e.box}, {"obj", e.obj}, {"cls", e.cls},
                    {"total", e.total}, {"precision", e.precision}, {"recall", e.recall},
                    {"map50", e.map50}, {"map5095", e.map5095}});
  return rows;
}

std::vector<EpochLog> history_from_json(const nlohmann::json& rows) {
  std::vector<EpochLog> out;
  for (const auto& r : rows) {
    EpochLog e;
    e.epoch = r.at("epoch").get<Index>();
    e.box = r.at("box").get<double>();
    e.obj = r.at("obj").get<double>();
    e.cls = r.at("cls").get<double>();
    e.total = r.at("total").get<double>();
    e.precision = r.at("precision").get<double>();
    e.recall = r.at("recall").get<double>();
    e.map50 = r.at("map50").get<double>();
    e.map5095 = r.at("map5095").get<double>();
    out.push_back(e);
  }
  return out;
}

}  // namespace

const TensorF* Checkpoint::find(const std::string& name) const {
  for (const auto& [key, t] : tensors)
    if (key == name) return &t;
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const nlohmann::json header = {
      {"config", nlohmann::json::parse(config_to_json(ckpt.config))},
      {"focus",
       {{"ema", ckpt.focus.ema},
        {"momentum", ckpt.focus.momentum},
        {"steps", ckpt.focus.steps},
        {"frozen", ckpt.focus.frozen}}},
      {"epoch", ckpt.epoch},
      {"step", ckpt.step},
      {"history", history_to_json(ckpt.history)}};
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("checkpoint: cannot open " + path.string() + " for writing");
  os.write(kMagic.data(), kMagic.size());
  os.put(static_cast<char>(kVersion));
  put_u32(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  put_u32(os, ckpt.tensors.size());
  for (const auto& [name, t] : ckpt.tensors) {
    put_u32(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tnsr(os, t);
  }
  if (!os) throw FormatError("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("checkpoint: cannot open " + path.string());
  if (get_bytes(is, 4) != std::string(kMagic.data(), kMagic.size()))
    throw FormatError("checkpoint: bad magic in " + path.string());
  const int version = is.get();
  if (version != kVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));

  Checkpoint ckpt;
  try {
    const auto header = nlohmann::json::parse(get_bytes(is, get_u32(is)));
    ckpt.config = config_from_json(header.at("config").dump());
    const auto& f = header.at("focus");
    ckpt.focus.ema = f.at("ema").get<double>();
    ckpt.focus.momentum = f.at("momentum").get<double>();
    ckpt.focus.steps = f.at("steps").get<std::int64_t>();
    ckpt.focus.frozen = f.at("frozen").get<bool>();
    ckpt.epoch = header.at("epoch").get<Index>();
    ckpt.step = header.at("step").get<Index>();
    ckpt.history = history_from_json(header.at("history"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad header: ") + e.what());
  }
  const std::uint32_t count = get_u32(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = get_bytes(is, get_u32(is));
    ckpt.tensors.emplace_back(std::move(name), read_tnsr<float>(is));
  }
  return ckpt;
}

std::vector<std::pair<std::string, TensorF>> model_tensors(const Detector& model) {
  std::vector<std::pair<std::string, TensorF>> out;
  for (const auto& [name, t] : model.store().params()) out.emplace_back(name, t.clone());
  for (const auto& [name, t] : model.store().buffers()) out.emplace_back(name, t.clone());
  return out;
}

void load_model_tensors(Detector& model, const Checkpoint& ckpt) {
  auto copy_into = [&](const std::string& name, TensorF target) {
    const TensorF* src = ckpt.find(name);
    if (src == nullptr) throw FormatError("checkpoint: missing tensor '" + name + "'");
    if (src->shape() != target.shape())
      throw FormatError("checkpoint: tensor '" + name + "' has shape " + shape_str(src->shape()) +
                        ", model expects " + shape_str(target.shape()));
    std::copy(src->data().begin(), src->data().end(), target.data().begin());
  };
  for (const auto& [name, t] : model.store().params()) copy_into(name, t);
  for (const auto& [name, t] : model.store().buffers()) copy_into(name, t);
}

std::unique_ptr<Detector> model_from_checkpoint(const Checkpoint& ckpt) {
  auto model = std::make_unique<Detector>(ckpt.config);
  load_model_tensors(*model, ckpt);
  return model;
}

}  // namespace detectlab::detector
