#include "cabin/model.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "cabin/config.hpp"
#include "cabin/init.hpp"
#include "binary_io.hpp"

namespace cabin {

std::string to_string(DecoderMode mode) { return mode == DecoderMode::MaxUnpool ? "unpool" : "nearest"; }

std::string to_string(ModelKind kind) { return kind == ModelKind::Autoencoder ? "autoencoder" : "baseline"; }

DecoderMode parse_decoder_mode(const std::string& text) {
  if (text == "unpool" || text == "maxunpool" || text == "ae") return DecoderMode::MaxUnpool;
  if (text == "nearest" || text == "upsample" || text == "aew") return DecoderMode::Nearest;
  throw std::invalid_argument("unknown decoder mode '" + text + "' (expected unpool or nearest)");
}

ModelKind parse_model_kind(const std::string& text) {
  if (text == "autoencoder" || text == "ae") return ModelKind::Autoencoder;
  if (text == "baseline") return ModelKind::Baseline;
  throw std::invalid_argument("unknown model kind '" + text + "' (expected autoencoder or baseline)");
}

void ModelSpec::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model spec: " + msg); };
  if (blocks < 1) fail("blocks must be >= 1");
  if (input_size < 2 || (input_size % (1 << blocks)) != 0)
    fail("input_size " + std::to_string(input_size) + " must be a positive multiple of 2^blocks");
  if (base_filters < 1) fail("base_filters must be >= 1");
  if (latent_dim < 1 || fc_hidden < 1 || head_hidden < 1) fail("layer widths must be >= 1");
  if (heads != kSeats || classes != kClasses)
    fail("classifier must have " + std::to_string(kSeats) + " heads of " + std::to_string(kClasses) + " classes");
}

std::uint64_t ModelSpec::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::int64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= static_cast<std::uint64_t>(v >> (8 * i)) & 0xFF;
      h *= 0x100000001b3ULL;
    }
  };
  mix(static_cast<int>(kind));
  mix(input_size);
  mix(base_filters);
  mix(blocks);
  mix(latent_dim);
  mix(static_cast<int>(decoder_mode));
  mix(heads);
  mix(classes);
  mix(head_hidden);
  mix(fc_hidden);
  return h;
}

template <typename S>
Model<S>::Model(const ModelSpec& spec, Rng& rng) : spec_(spec) {
  spec_.validate();
  const Index side = spec_.bottleneck_side();
  const Index flat = spec_.filters(spec_.blocks - 1) * side * side;

  for (int k = 0; k < spec_.blocks; ++k) {
    const Index in = k == 0 ? 1 : spec_.filters(k - 1), f = spec_.filters(k);
    const std::string p = "enc.b" + std::to_string(k);
    encoder_.push_back({add_conv_bn(p + ".0", in, f, rng), add_conv_bn(p + ".1", f, f, rng)});
  }
  encoder_fc_ = {add_dense("enc.fc0", flat, spec_.fc_hidden, rng),
                 add_dense("enc.fc1", spec_.fc_hidden, spec_.latent_dim, rng)};

  if (spec_.has_decoder()) {
    decoder_fc_ = {add_dense("dec.fc0", spec_.latent_dim, spec_.fc_hidden, rng),
                   add_dense("dec.fc1", spec_.fc_hidden, flat, rng)};
    for (int k = spec_.blocks - 1; k >= 0; --k) {
      const Index f = spec_.filters(k), out = k == 0 ? 1 : spec_.filters(k - 1);
      const std::string p = "dec.b" + std::to_string(k);
      decoder_.push_back({add_conv_bn(p + ".0", f, f, rng), add_conv_bn(p + ".1", f, out, rng, k != 0)});
    }
  }

  head_ = {add_dense("cls.fc0", spec_.latent_dim, spec_.head_hidden, rng),
           add_dense("cls.fc1", spec_.head_hidden, static_cast<Index>(spec_.heads) * spec_.classes, rng)};
}

template <typename S>
std::size_t Model<S>::add_param(std::string name, Tensor<S> value, bool decay) {
  value.set_requires_grad(true);
  params_.push_back({std::move(name), std::move(value), decay});
  return params_.size() - 1;
}

template <typename S>
ConvSlots Model<S>::add_conv_bn(const std::string& prefix, Index in, Index out, Rng& rng, bool with_bn) {
  ConvSlots slots;
  slots.weight = add_param(prefix + ".conv.weight", kaiming_uniform<S>({out, in, 3, 3}, in * 9, rng), true);
  slots.bias = add_param(prefix + ".conv.bias", Tensor<S>({out}), false);
  if (with_bn) {
    slots.gamma = add_param(prefix + ".bn.gamma", Tensor<S>({out}, S(1)), false);
    slots.beta = add_param(prefix + ".bn.beta", Tensor<S>({out}), false);
    buffers_.push_back({prefix + ".bn", BatchNormStats<S>(out)});
    slots.stats = buffers_.size() - 1;
  }
  return slots;
}

template <typename S>
DenseSlots Model<S>::add_dense(const std::string& prefix, Index in, Index out, Rng& rng) {
  DenseSlots slots;
  slots.weight = add_param(prefix + ".weight", kaiming_uniform<S>({out, in}, in, rng), true);
  slots.bias = add_param(prefix + ".bias", Tensor<S>({out}), false);
  return slots;
}

template <typename S>
Tensor<S> Model<S>::conv_bn_relu(const ConvSlots& layer, const Tensor<S>& x, BatchNormMode mode) {
  Tensor<S> y = conv2d(x, params_[layer.weight].value, params_[layer.bias].value);
  if (layer.stats != kNoSlot)
    y = batchnorm(y, params_[layer.gamma].value, params_[layer.beta].value, buffers_[layer.stats].stats, mode);
  return relu(y);
}

template <typename S>
Tensor<S> Model<S>::dense(const DenseSlots& layer, const Tensor<S>& x) const {
  return linear(x, params_[layer.weight].value, params_[layer.bias].value);
}

template <typename S>
typename Model<S>::Encoded Model<S>::encode(const Tensor<S>& images, BatchNormMode mode) {
  const Index n = spec_.input_size;
  if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != n || images.dim(3) != n)
    throw ShapeError("encode: expected [N,1," + std::to_string(n) + "," + std::to_string(n) + "], got " +
                     to_string(images.shape()));
  Encoded out;
  Tensor<S> x = images;
  for (const auto& block : encoder_) {
    x = conv_bn_relu(block[1], conv_bn_relu(block[0], x, mode), mode);
    auto [pooled, idx] = maxpool2x2(x);
    x = pooled;
    if (spec_.decoder_mode == DecoderMode::MaxUnpool) out.indices.push_back(std::move(idx));
  }
  x = reshape(x, {x.dim(0), x.numel() / x.dim(0)});
  out.latent = dense(encoder_fc_[1], relu(dense(encoder_fc_[0], x)));
  return out;
}

template <typename S>
Tensor<S> Model<S>::decode(const Tensor<S>& latent, const std::vector<PoolIndices>& indices, BatchNormMode mode) {
  if (!spec_.has_decoder()) throw std::logic_error("decode: baseline model has no decoder");
  const bool unpool = spec_.decoder_mode == DecoderMode::MaxUnpool;
  if (unpool && indices.size() != static_cast<std::size_t>(spec_.blocks))
    throw std::invalid_argument("decode: expected " + std::to_string(spec_.blocks) + " pool index sets, got " +
                                std::to_string(indices.size()));
  const Index side = spec_.bottleneck_side();
  Tensor<S> x = relu(dense(decoder_fc_[1], relu(dense(decoder_fc_[0], latent))));
  x = reshape(x, {latent.dim(0), spec_.filters(spec_.blocks - 1), side, side});
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    const std::size_t k = decoder_.size() - 1 - i;
    x = unpool ? maxunpool2x2(x, indices[k]) : upsample_nearest2x(x);
    x = conv_bn_relu(decoder_[i][0], x, mode);
    if (k == 0) {
      const ConvSlots& last = decoder_[i][1];
      x = sigmoid(conv2d(x, params_[last.weight].value, params_[last.bias].value));
    } else {
      x = conv_bn_relu(decoder_[i][1], x, mode);
    }
  }
  return x;
}

template <typename S>
Tensor<S> Model<S>::logits(const Tensor<S>& latent) const {
  return dense(head_[1], relu(dense(head_[0], latent)));
}

template <typename S>
std::vector<Tensor<S>> Model<S>::classify(const Tensor<S>& latent) const {
  Tensor<S> z = logits(latent);
  std::vector<Tensor<S>> out;
  for (int h = 0; h < spec_.heads; ++h)
    out.push_back(softmax_rows(slice_columns(z, static_cast<Index>(h) * spec_.classes, spec_.classes)));
  return out;
}

template <typename S>
Index Model<S>::parameter_count() const {
  Index total = 0;
  for (const auto& p : params_) total += p.value.numel();
  return total;
}

template <typename S>
Tensor<S>& Model<S>::parameter(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p.value;
  throw std::out_of_range("no parameter named '" + name + "'");
}

template <typename S>
void Model<S>::zero_grad() {
  for (auto& p : params_) p.value.clear_grad();
}

template <typename S>
Model<S> Model<S>::clone() const {
  Model copy = *this;
  for (auto& p : copy.params_) p.value = p.value.detach().set_requires_grad(true);
  return copy;
}

template <typename S>
template <typename Other>
Model<Other> Model<S>::cast() const {
  Model<Other> out;
  out.spec_ = spec_;
  for (const auto& p : params_) out.params_.push_back({p.name, cabin::cast<Other>(p.value, true), p.decay});
  for (const auto& b : buffers_) {
    BatchNormStats<Other> stats;
    stats.running_mean.assign(b.stats.running_mean.begin(), b.stats.running_mean.end());
    stats.running_var.assign(b.stats.running_var.begin(), b.stats.running_var.end());
    out.buffers_.push_back({b.name, std::move(stats)});
  }
  out.encoder_ = encoder_;
  out.encoder_fc_ = encoder_fc_;
  out.decoder_fc_ = decoder_fc_;
  out.decoder_ = decoder_;
  out.head_ = head_;
  return out;
}

namespace {

using namespace detail;

constexpr char kMagic[8] = {'C', 'A', 'B', 'I', 'N', 'C', 'K', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

enum class EntryKind : std::uint8_t { Parameter = 0, RunningMean = 1, RunningVar = 2 };

struct Entry {
  EntryKind kind;
  Shape shape;
  std::vector<float> values;
};

ModelSpec read_header(Reader& r) {
  char magic[8];
  r.raw(magic, 8);
  if (!std::equal(magic, magic + 8, kMagic)) throw CheckpointError("not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const std::uint64_t hash = r.u64();
  ModelSpec spec;
  try {
    spec = spec_from_json(nlohmann::json::parse(r.string(1 << 16)));
    spec.validate();
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint spec invalid: ") + e.what());
  }
  if (spec.hash() != hash) throw CheckpointError("checkpoint spec hash mismatch");
  return spec;
}

}  // namespace

template <typename S>
void Model<S>::save(std::ostream& os) const {
  os.write(kMagic, 8);
  put_u32(os, kCheckpointVersion);
  put_u64(os, spec_.hash());
  put_string(os, to_json(spec_).dump());
  put_u32(os, static_cast<std::uint32_t>(params_.size() + 2 * buffers_.size()));
  auto entry = [&os](const std::string& name, EntryKind kind, const Shape& shape, auto values) {
    put_string(os, name);
    os.put(static_cast<char>(kind));
    put_u32(os, static_cast<std::uint32_t>(shape.size()));
    for (Index d : shape) put_u32(os, static_cast<std::uint32_t>(d));
    for (auto v : values) put_f32(os, static_cast<float>(v));
  };
  for (const auto& p : params_) entry(p.name, EntryKind::Parameter, p.value.shape(), p.value.data());
  for (const auto& b : buffers_) {
    const Shape shape{static_cast<Index>(b.stats.running_mean.size())};
    entry(b.name, EntryKind::RunningMean, shape, std::span<const S>(b.stats.running_mean));
    entry(b.name, EntryKind::RunningVar, shape, std::span<const S>(b.stats.running_var));
  }
  if (!os) throw CheckpointError("checkpoint write failed");
}

template <typename S>
void Model<S>::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open " + path.string() + " for writing");
  save(os);
}

template <typename S>
void Model<S>::load(std::istream& is) {
  Reader r{is};
  const ModelSpec spec = read_header(r);
  if (spec.hash() != spec_.hash()) throw CheckpointError("checkpoint spec does not match model spec");
  const std::uint32_t count = r.u32();
  const std::size_t expected = params_.size() + 2 * buffers_.size();
  if (count != expected)
    throw CheckpointError("checkpoint has " + std::to_string(count) + " entries, model needs " +
                         std::to_string(expected));
  std::map<std::pair<std::string, int>, Entry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.string(4096);
    char kind_byte;
    r.raw(&kind_byte, 1);
    const auto kind = static_cast<EntryKind>(static_cast<std::uint8_t>(kind_byte));
    if (static_cast<std::uint8_t>(kind) > 2) throw CheckpointError("bad entry kind for '" + name + "'");
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw CheckpointError("bad rank for '" + name + "'");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.u32());
    const Index n = numel(shape);
    if (n > (Index(1) << 28)) throw CheckpointError("entry '" + name + "' too large");
    std::vector<float> values(static_cast<std::size_t>(n));
    for (auto& v : values) v = r.f32();
    entries[{name, static_cast<int>(kind)}] = {kind, std::move(shape), std::move(values)};
  }
  auto find = [&entries](const std::string& name, EntryKind kind, const Shape& shape) -> const Entry& {
    auto it = entries.find({name, static_cast<int>(kind)});
    if (it == entries.end()) throw CheckpointError("checkpoint missing '" + name + "'");
    if (it->second.shape != shape)
      throw CheckpointError("checkpoint shape mismatch for '" + name + "': " + to_string(it->second.shape) +
                            " vs " + to_string(shape));
    return it->second;
  };
  // Validate everything before touching the model.
  for (const auto& p : params_) find(p.name, EntryKind::Parameter, p.value.shape());
  for (const auto& b : buffers_) {
    const Shape shape{static_cast<Index>(b.stats.running_mean.size())};
    find(b.name, EntryKind::RunningMean, shape);
    find(b.name, EntryKind::RunningVar, shape);
  }
  for (auto& p : params_) {
    const Entry& e = find(p.name, EntryKind::Parameter, p.value.shape());
    std::copy(e.values.begin(), e.values.end(), p.value.data().begin());
    p.value.clear_grad();
  }
  for (auto& b : buffers_) {
    const Shape shape{static_cast<Index>(b.stats.running_mean.size())};
    const Entry& m = find(b.name, EntryKind::RunningMean, shape);
    const Entry& v = find(b.name, EntryKind::RunningVar, shape);
    std::copy(m.values.begin(), m.values.end(), b.stats.running_mean.begin());
    std::copy(v.values.begin(), v.values.end(), b.stats.running_var.begin());
  }
}

template <typename S>
void Model<S>::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  try {
    load(is);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

template <typename S>
ModelSpec Model<S>::read_spec(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  Reader r{is};
  try {
    return read_header(r);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

template <typename S>
Model<S> Model<S>::from_checkpoint(const std::filesystem::path& path) {
  Rng rng(0);
  Model model(read_spec(path), rng);
  model.load(path);
  return model;
}

template <typename S>
ForwardResult<S> combined_objective(Model<S>& model, const Tensor<S>& clean, const Tensor<S>& augmented,
                                    std::span<const int> labels, const LossConfig& cfg, BatchNormMode mode,
                                    const FeatureStack<S>* features) {
  auto encoded = model.encode(augmented, mode);
  ForwardResult<S> out;
  out.logits = model.logits(encoded.latent);
  if (model.spec().has_decoder()) {
    out.reconstruction = model.decode(encoded.latent, encoded.indices, mode);
    out.terms = objective(clean, out.reconstruction, out.logits, labels, cfg, features);
  } else {
    Tensor<S> cls = seat_classification_loss(out.logits, labels);
    out.terms = {cls, Tensor<S>::scalar(S(0)), cls};
  }
  return out;
}

template class Model<float>;
template class Model<double>;
template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;

template ForwardResult<float> combined_objective(Model<float>&, const Tensor<float>&, const Tensor<float>&,
                                                 std::span<const int>, const LossConfig&, BatchNormMode,
                                                 const FeatureStack<float>*);
template ForwardResult<double> combined_objective(Model<double>&, const Tensor<double>&, const Tensor<double>&,
                                                  std::span<const int>, const LossConfig&, BatchNormMode,
                                                  const FeatureStack<double>*);

}  // namespace cabin
