// SPDX-License-Identifier: Apache-2.0
#include "vlmoe/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "vlmoe/config.hpp"
#include "vlmoe/errors.hpp"

namespace vlmoe {

namespace {

constexpr char kMagic[4] = {'V', 'L', 'M', 'C'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw DataError(std::string("checkpoint truncated at ") + what);
  return v;
}

void write_string(std::ostream& os, const std::string& s) {
  write_pod<uint16_t>(os, static_cast<uint16_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is, const char* what) {
  const auto n = read_pod<uint16_t>(is, what);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw DataError(std::string("checkpoint truncated at ") + what);
  return s;
}

void write_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
  write_string(os, name);
  write_pod<uint8_t>(os, t.requires_grad() ? 1 : 0);
  write_pod<uint32_t>(os, static_cast<uint32_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i)
    write_pod<int64_t>(os, static_cast<int64_t>(t.dim(i)));
  os.write(reinterpret_cast<const char*>(t.data().data()),
           static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

struct RawTensor {
  std::string name;
  bool requires_grad = false;
  Shape shape;
  std::vector<double> data;
};

RawTensor read_tensor(std::istream& is) {
  RawTensor rt;
  rt.name = read_string(is, "tensor name");
  rt.requires_grad = read_pod<uint8_t>(is, "tensor flags") != 0;
  const auto rank = read_pod<uint32_t>(is, "tensor rank");
  if (rank > 8) throw DataError("checkpoint corrupt: rank " + std::to_string(rank));
  std::size_t numel = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    const auto d = read_pod<int64_t>(is, "tensor dims");
    if (d <= 0 || d > (1 << 28))
      throw DataError("checkpoint corrupt: bad extent in " + rt.name);
    rt.shape.push_back(static_cast<int>(d));
    numel *= static_cast<std::size_t>(d);
  }
  rt.data.resize(numel);
  is.read(reinterpret_cast<char*>(rt.data.data()),
          static_cast<std::streamsize>(numel * sizeof(double)));
  if (!is) throw DataError("checkpoint truncated in tensor " + rt.name);
  return rt;
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path,
                     const AdamW* optimizer, const CheckpointExtra& extra) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 4);
  write_pod<uint32_t>(os, kVersion);

  KeyValueConfig kv;
  dump_model_config(model.cfg, kv);
  const std::string cfg_text = kv.to_text();
  write_pod<uint64_t>(os, cfg_text.size());
  os.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));
  write_pod<uint8_t>(os, model.is_sparse() ? 1 : 0);

  const auto params = model.named_parameters();
  write_pod<uint64_t>(os, params.size());
  for (const auto& p : params) write_tensor(os, p.name, p.tensor);

  const uint64_t opt_entries = optimizer ? optimizer->state().size() : 0;
  write_pod<uint64_t>(os, opt_entries);
  if (optimizer) {
    write_pod<uint64_t>(os, optimizer->steps());
    for (const auto& [name, moments] : optimizer->state()) {
      write_string(os, name);
      write_pod<uint64_t>(os, moments.m.size());
      os.write(reinterpret_cast<const char*>(moments.m.data()),
               static_cast<std::streamsize>(moments.m.size() * sizeof(double)));
      os.write(reinterpret_cast<const char*>(moments.v.data()),
               static_cast<std::streamsize>(moments.v.size() * sizeof(double)));
    }
  } else {
    write_pod<uint64_t>(os, 0);
  }

  write_pod<uint64_t>(os, extra.step);
  for (uint64_t w : extra.rng_state) write_pod<uint64_t>(os, w);
  if (!os) throw DataError("checkpoint write failed: " + path);
}

Model load_checkpoint(const std::string& path, AdamW* optimizer,
                      CheckpointExtra* extra) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("not a checkpoint file: " + path);
  const auto version = read_pod<uint32_t>(is, "version");
  if (version != kVersion)
    throw DataError("unsupported checkpoint version " +
                    std::to_string(version));

  const auto cfg_len = read_pod<uint64_t>(is, "config length");
  if (cfg_len > (1 << 20)) throw DataError("checkpoint corrupt: config length");
  std::string cfg_text(cfg_len, '\0');
  is.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len));
  if (!is) throw DataError("checkpoint truncated in config");
  ModelConfig cfg;
  apply_model_config(KeyValueConfig::parse_text(cfg_text), cfg);
  const bool sparse = read_pod<uint8_t>(is, "sparse flag") != 0;

  Model model = Model::init(cfg, 0);
  if (sparse) {
    Rng rng(0);
    model = sparsify(model, cfg.experts, cfg.top_k, cfg.moe_period, 0.0, rng);
  }

  const auto count = read_pod<uint64_t>(is, "tensor count");
  std::map<std::string, RawTensor> raw;
  for (uint64_t i = 0; i < count; ++i) {
    RawTensor rt = read_tensor(is);
    raw.emplace(rt.name, std::move(rt));
  }
  auto params = model.named_parameters();
  if (params.size() != raw.size())
    throw DataError("checkpoint parameter inventory mismatch: file has " +
                    std::to_string(raw.size()) + ", model needs " +
                    std::to_string(params.size()));
  for (auto& p : params) {
    auto it = raw.find(p.name);
    if (it == raw.end())
      throw DataError("checkpoint missing parameter: " + p.name);
    if (it->second.shape != p.tensor.shape())
      throw DataError("checkpoint shape mismatch for " + p.name);
    p.tensor.mutable_data() = std::move(it->second.data);
    p.tensor.set_requires_grad(it->second.requires_grad);
  }

  const auto opt_entries = read_pod<uint64_t>(is, "optimizer entries");
  const auto opt_steps = read_pod<uint64_t>(is, "optimizer steps");
  for (uint64_t i = 0; i < opt_entries; ++i) {
    const std::string name = read_string(is, "optimizer entry");
    const auto n = read_pod<uint64_t>(is, "optimizer entry size");
    if (n > (1ULL << 32)) throw DataError("checkpoint corrupt: moment size");
    AdamW::Moments moments;
    moments.m.resize(n);
    moments.v.resize(n);
    is.read(reinterpret_cast<char*>(moments.m.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    is.read(reinterpret_cast<char*>(moments.v.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw DataError("checkpoint truncated in optimizer state");
    if (optimizer) optimizer->state().emplace(name, std::move(moments));
  }
  if (optimizer) optimizer->set_steps(opt_steps);

  CheckpointExtra ex;
  ex.step = read_pod<uint64_t>(is, "step");
  for (auto& w : ex.rng_state) w = read_pod<uint64_t>(is, "rng state");
  if (extra) *extra = ex;
  return model;
}

}  // namespace vlmoe
