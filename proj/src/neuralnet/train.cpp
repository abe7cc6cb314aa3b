#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "meshdens/nn.hpp"

namespace meshdens {

void Adam::step(const std::vector<Param<float>*>& params) {
  if (m.size() != params.size()) {
    m.clear();
    v.clear();
    for (auto* p : params) {
      m.emplace_back(p->size(), 0.0f);
      v.emplace_back(p->size(), 0.0f);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const auto b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
  const auto step = static_cast<float>(cfg_.lr / c1);
  const auto inv_c2 = static_cast<float>(1.0 / c2), eps = static_cast<float>(cfg_.eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Param<float>& p = *params[k];
    if (m[k].size() != p.size()) throw NnError("adam: parameter " + p.name + " changed size");
    for (std::size_t i = 0; i < p.size(); ++i) {
      const float g = p.grad[i];
      m[k][i] = b1 * m[k][i] + (1.0f - b1) * g;
      v[k][i] = b2 * v[k][i] + (1.0f - b2) * g * g;
      p.value[i] -= step * m[k][i] / (std::sqrt(v[k][i] * inv_c2) + eps);
    }
  }
}

std::vector<std::vector<float>> snapshot(UNet<float>& model) {
  std::vector<std::vector<float>> out;
  for (auto* p : model.parameters()) out.push_back(p->value);
  for (auto& [name, buf] : model.buffers()) out.push_back(*buf);
  return out;
}

void restore(UNet<float>& model, const std::vector<std::vector<float>>& snap) {
  auto params = model.parameters();
  auto bufs = model.buffers();
  if (snap.size() != params.size() + bufs.size()) throw NnError("restore: snapshot does not match the model");
  std::size_t k = 0;
  for (auto* p : params) {
    if (snap[k].size() != p->size()) throw NnError("restore: size mismatch for " + p->name);
    p->value = snap[k++];
  }
  for (auto& [name, buf] : bufs) {
    if (snap[k].size() != buf->size()) throw NnError("restore: size mismatch for " + name);
    *buf = snap[k++];
  }
}

namespace {

void gather(const std::vector<TrainingPair>& data, std::span<const std::size_t> idx, Tensor4<float>& x,
            Tensor4<float>& y) {
  std::vector<InputStack> in;
  std::vector<GrayImage> out;
  for (std::size_t i : idx) {
    in.push_back(data[i].input);
    out.push_back(data[i].target);
  }
  x = to_tensor(std::span<const InputStack>(in));
  y = to_tensor(std::span<const GrayImage>(out));
}

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace

double evaluate_loss(UNet<float>& model, const std::vector<TrainingPair>& data, std::span<const std::size_t> idx,
                     int batch_size) {
  if (idx.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  Tensor4<float> x, y;
  for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto part = idx.subspan(start, std::min<std::size_t>(static_cast<std::size_t>(batch_size), idx.size() - start));
    gather(data, part, x, y);
    s += static_cast<double>(mse_loss(model.forward(x, false), y).value) * static_cast<double>(part.size());
  }
  return s / static_cast<double>(idx.size());
}

TrainState train(UNet<float>& model, const std::vector<TrainingPair>& data, const TrainConfig& cfg,
                 const EpochCallback& on_epoch) {
  if (data.empty()) throw NnError("train: empty dataset");
  if (cfg.batch_size < 2) throw NnError("train: batch size must be at least 2 for batch normalization");
  if (!(cfg.val_fraction >= 0.0 && cfg.val_fraction < 1.0)) throw NnError("train: val_fraction must lie in [0, 1)");
  TrainState st;
  st.optimizer = Adam(cfg.adam);
  st.seed = cfg.seed;
  Rng rng(cfg.seed);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  shuffle(order, rng);
  auto n_val = static_cast<std::size_t>(std::floor(cfg.val_fraction * static_cast<double>(data.size())));
  if (cfg.val_fraction > 0.0 && n_val == 0 && data.size() > 2) n_val = 1;
  st.val_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  st.train_indices.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  if (st.train_indices.size() < 2) throw NnError("train: need at least 2 training samples");

  const bool validate = !st.val_indices.empty();
  st.best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  Tensor4<float> x, y;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    st.epoch = epoch;
    Rng erng = rng.split(static_cast<std::uint64_t>(epoch));
    auto idx = st.train_indices;
    shuffle(idx, erng);
    // A trailing batch of one joins the previous batch.
    std::vector<std::pair<std::size_t, std::size_t>> batches;
    for (std::size_t s = 0; s < idx.size(); s += static_cast<std::size_t>(cfg.batch_size))
      batches.emplace_back(s, std::min(idx.size(), s + static_cast<std::size_t>(cfg.batch_size)));
    if (batches.size() > 1 && batches.back().second - batches.back().first < 2) {
      batches[batches.size() - 2].second = batches.back().second;
      batches.pop_back();
    }
    double sum = 0.0;
    std::size_t seen = 0;
    bool step_limit = false;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto [b0, b1] = batches[bi];
      gather(data, std::span<const std::size_t>(idx).subspan(b0, b1 - b0), x, y);
      model.zero_grad();
      const auto loss = mse_loss(model.forward(x, true), y);
      if (!std::isfinite(loss.value))
        throw NnError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(bi) +
                      " after " + std::to_string(st.steps) + " steps");
      model.backward(loss.grad);
      st.optimizer.step(model.parameters());
      ++st.steps;
      sum += static_cast<double>(loss.value) * static_cast<double>(b1 - b0);
      seen += b1 - b0;
      if (cfg.max_steps > 0 && st.steps >= cfg.max_steps) {
        step_limit = true;
        break;
      }
    }
    EpochLog log{epoch, sum / static_cast<double>(seen), std::numeric_limits<double>::quiet_NaN()};
    if (validate) log.val_loss = evaluate_loss(model, data, st.val_indices, cfg.batch_size);
    st.history.push_back(log);
    if (on_epoch) on_epoch(log);

    const double score = validate ? log.val_loss : log.train_loss;
    if (score < st.best_val) {
      st.best_val = score;
      st.best_epoch = epoch;
      st.best_snapshot = snapshot(model);
      since_best = 0;
    } else if (validate && ++since_best >= cfg.patience) {
      st.stopped_early = true;
      break;
    }
    if (step_limit) break;
  }
  if (validate && !st.best_snapshot.empty()) restore(model, st.best_snapshot);
  return st;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'U', 'N', 'E', 'T'};

nlohmann::json descriptor(UNet<float>& model) {
  const auto& c = model.config();
  nlohmann::json d;
  d["architecture"] = "unet";
  d["base"] = c.base;
  d["in_channels"] = c.in_channels;
  d["resolution"] = c.resolution;
  d["encoder_sizes"] = model.encoder_sizes();
  nlohmann::json blobs = nlohmann::json::array();
  for (auto* p : model.parameters()) blobs.push_back({{"name", p->name}, {"shape", p->shape}});
  for (auto& [name, buf] : model.buffers()) blobs.push_back({{"name", name}, {"shape", {buf->size()}}});
  d["blobs"] = blobs;
  return d;
}

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw NnError("model file truncated");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_floats(std::ostream& os, const std::vector<float>& v) {
  static_assert(sizeof(float) == 4);
  for (float f : v) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    put_u32(os, u);
  }
}

void get_floats(std::istream& is, std::vector<float>& v) {
  for (auto& f : v) {
    const std::uint32_t u = get_u32(is);
    std::memcpy(&f, &u, 4);
  }
}

}  // namespace

void save_model(const std::string& path, UNet<float>& model, const std::string& metadata) {
  nlohmann::json d = descriptor(model);
  try {
    d["meta"] = nlohmann::json::parse(metadata);
  } catch (const nlohmann::json::exception& e) {
    throw NnError(std::string("save_model: metadata is not JSON: ") + e.what());
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw NnError("cannot write " + path);
  const std::string desc = d.dump();
  os.write(kMagic, 4);
  put_u32(os, kModelVersion);
  put_u32(os, static_cast<std::uint32_t>(desc.size()));
  os.write(desc.data(), static_cast<std::streamsize>(desc.size()));
  for (const auto& blob : snapshot(model)) put_floats(os, blob);
  if (!os) throw NnError("failed writing " + path);
}

namespace {

nlohmann::json read_header(std::istream& is, const std::string& path) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw NnError(path + ": not a UNET model file");
  const std::uint32_t version = get_u32(is);
  if (version != kModelVersion) throw NnError(path + ": unsupported model version " + std::to_string(version));
  const std::uint32_t len = get_u32(is);
  std::string text(len, '\0');
  if (!is.read(text.data(), len)) throw NnError(path + ": truncated descriptor");
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw NnError(path + ": bad descriptor: " + e.what());
  }
}

}  // namespace

std::string read_model_descriptor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw NnError("cannot read " + path);
  return read_header(is, path).dump();
}

UNet<float> load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw NnError("cannot read " + path);
  const nlohmann::json d = read_header(is, path);
  if (d.value("architecture", "") != "unet") throw NnError(path + ": unknown architecture");
  UNetConfig cfg;
  try {
    cfg.base = d.at("base").get<int>();
    cfg.in_channels = d.at("in_channels").get<int>();
    cfg.resolution = d.at("resolution").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw NnError(path + ": incomplete descriptor: " + e.what());
  }
  UNet<float> model(cfg);
  if (descriptor(model)["blobs"] != d.at("blobs")) throw NnError(path + ": parameter table does not match the architecture");
  auto snap = snapshot(model);
  for (auto& blob : snap) get_floats(is, blob);
  if (is.peek() != std::char_traits<char>::eof()) throw NnError(path + ": trailing bytes after parameters");
  restore(model, snap);
  return model;
}

}  // namespace meshdens
