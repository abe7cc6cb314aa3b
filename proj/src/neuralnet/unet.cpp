#include "meshdens/nn.hpp"

namespace meshdens {

namespace {

// Decoder stages: kernel, stride, padding, output padding.
struct UpSpec {
  int k, s, p, op;
};
constexpr UpSpec kUp[5] = {{2, 1, 0, 0}, {3, 2, 1, 1}, {3, 2, 1, 0}, {3, 2, 1, 1}, {3, 2, 1, 1}};

}  // namespace

template <class T>
UNet<T>::UNet(const UNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.base < 1 || cfg.in_channels < 1) throw NnError("unet: base depth and input channels must be positive");
  const int b = cfg.base;
  const int depth[5] = {b, 2 * b, 4 * b, 8 * b, 16 * b};
  int in = cfg.in_channels;
  for (int i = 0; i < 4; ++i) {
    const std::string n = "enc" + std::to_string(i + 1);
    enc_[i] = Down{Conv2d<T>(in, depth[i], 3, 2, 1, n + ".conv"), BatchNorm2d<T>(depth[i], n + ".bn"), {}};
    skip_c_[i] = depth[i];
    in = depth[i];
  }
  mid_conv_ = Conv2d<T>(depth[3], depth[4], 3, 1, 1, "mid.conv");
  mid_bn_ = BatchNorm2d<T>(depth[4], "mid.bn");
  // dec4..dec1 feed a skip concat; dec0 restores full resolution.
  in = depth[4];
  for (int i = 0; i < 5; ++i) {
    const int out = i < 4 ? depth[3 - i] : b;
    const std::string n = "dec" + std::to_string(4 - i);
    const UpSpec& u = kUp[i];
    dec_[i] = Up{ConvTranspose2d<T>(in, out, u.k, u.s, u.p, u.op, n + ".deconv"), BatchNorm2d<T>(out, n + ".bn"), {}};
    in = i < 4 ? out + skip_c_[3 - i] : out;
  }
  head_ = Conv2d<T>(b, 1, 1, 1, 0, "head.conv");

  const auto sizes = encoder_sizes();
  const auto up = decoder_sizes();
  for (int i = 0; i < 5; ++i) {
    const int s = up[static_cast<std::size_t>(i)];
    const int want = i < 4 ? sizes[static_cast<std::size_t>(3 - i)] : cfg.resolution;
    if (s != want)
      throw NnError("unet: decoder stage " + std::to_string(i) + " yields " + std::to_string(s) + ", expected " +
                    std::to_string(want) + " (resolution " + std::to_string(cfg.resolution) + ")");
  }

  Rng rng(seed);
  for (auto& d : enc_) d.conv.init(rng);
  mid_conv_.init(rng);
  for (auto& u : dec_) u.deconv.init(rng);
  head_.init(rng);
}

template <class T>
std::vector<int> UNet<T>::encoder_sizes() const {
  std::vector<int> out;
  int s = cfg_.resolution;
  for (const auto& d : enc_) out.push_back(s = d.conv.out_size(s));
  if (s < pool_.k) throw NnError("unet: resolution too small for the encoder path");
  out.push_back(conv_out_size(s, pool_.k, pool_.stride, 0));
  return out;
}

template <class T>
std::vector<int> UNet<T>::decoder_sizes() const {
  std::vector<int> out;
  int s = encoder_sizes().back();
  for (const auto& u : dec_) out.push_back(s = u.deconv.out_size(s));
  return out;
}

template <class T>
Tensor4<T> UNet<T>::down(Down& d, const Tensor4<T>& x, bool train, const char* block) {
  try {
    return d.relu.forward(d.bn.forward(d.conv.forward(x), train));
  } catch (const NnError& e) {
    throw NnError(std::string("unet block ") + block + ": " + e.what());
  }
}

template <class T>
Tensor4<T> UNet<T>::up(Up& u, const Tensor4<T>& x, bool train, const char* block) {
  try {
    return u.relu.forward(u.bn.forward(u.deconv.forward(x), train));
  } catch (const NnError& e) {
    throw NnError(std::string("unet block ") + block + ": " + e.what());
  }
}

template <class T>
Tensor4<T> UNet<T>::forward(const Tensor4<T>& x, bool train) {
  if (x.c != cfg_.in_channels || x.h != cfg_.resolution || x.w != cfg_.resolution)
    throw NnError("unet: input " + x.shape_str() + " does not match the configured " +
                  std::to_string(cfg_.in_channels) + "x" + std::to_string(cfg_.resolution) + "x" +
                  std::to_string(cfg_.resolution));
  static const char* enc_names[4] = {"enc1", "enc2", "enc3", "enc4"};
  static const char* dec_names[5] = {"dec4", "dec3", "dec2", "dec1", "dec0"};
  Tensor4<T> skips[4];
  Tensor4<T> h = x;
  for (int i = 0; i < 4; ++i) skips[i] = h = down(enc_[i], h, train, enc_names[i]);
  try {
    h = mid_bn_.forward(mid_conv_.forward(pool_.forward(h)), train);
  } catch (const NnError& e) {
    throw NnError(std::string("unet block mid: ") + e.what());
  }
  for (int i = 0; i < 5; ++i) {
    h = up(dec_[i], h, train, dec_names[i]);
    if (i < 4) {
      try {
        h = concat_channels(h, skips[3 - i]);
      } catch (const NnError& e) {
        throw NnError(std::string("unet block ") + dec_names[i] + " skip: " + e.what());
      }
    }
  }
  return sigmoid_.forward(head_.forward(h));
}

template <class T>
Tensor4<T> UNet<T>::backward(const Tensor4<T>& grad_out) {
  Tensor4<T> g = head_.backward(sigmoid_.backward(grad_out));
  Tensor4<T> skip_grad[4];
  for (int i = 4; i >= 0; --i) {
    if (i < 4) {
      Tensor4<T> gd;
      split_channels(g, dec_[i].deconv.out_c, gd, skip_grad[3 - i]);
      g = std::move(gd);
    }
    g = dec_[i].deconv.backward(dec_[i].bn.backward(dec_[i].relu.backward(g)));
  }
  g = pool_.backward(mid_conv_.backward(mid_bn_.backward(g)));
  for (int i = 3; i >= 0; --i) {
    for (std::size_t j = 0; j < g.size(); ++j) g.data[j] += skip_grad[i].data[j];
    g = enc_[i].conv.backward(enc_[i].bn.backward(enc_[i].relu.backward(g)));
  }
  return g;
}

template <class T>
std::vector<Param<T>*> UNet<T>::parameters() {
  std::vector<Param<T>*> out;
  auto conv = [&](auto& c) {
    out.push_back(&c.weight);
    out.push_back(&c.bias);
  };
  auto bn = [&](BatchNorm2d<T>& n) {
    out.push_back(&n.gamma);
    out.push_back(&n.beta);
  };
  for (auto& d : enc_) {
    conv(d.conv);
    bn(d.bn);
  }
  conv(mid_conv_);
  bn(mid_bn_);
  for (auto& u : dec_) {
    conv(u.deconv);
    bn(u.bn);
  }
  conv(head_);
  return out;
}

template <class T>
std::vector<std::pair<std::string, std::vector<T>*>> UNet<T>::buffers() {
  std::vector<std::pair<std::string, std::vector<T>*>> out;
  auto add = [&](BatchNorm2d<T>& n) {
    out.emplace_back(n.name + ".running_mean", &n.running_mean);
    out.emplace_back(n.name + ".running_var", &n.running_var);
  };
  for (auto& d : enc_) add(d.bn);
  add(mid_bn_);
  for (auto& u : dec_) add(u.bn);
  return out;
}

template <class T>
std::size_t UNet<T>::parameter_count() {
  std::size_t n = 0;
  for (auto* p : parameters()) n += p->size();
  return n;
}

template <class T>
void UNet<T>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

template class UNet<float>;
template class UNet<double>;

Tensor4<float> to_tensor(std::span<const InputStack> stacks) {
  if (stacks.empty()) throw NnError("to_tensor: empty batch");
  const int h = stacks[0].geometry.height(), w = stacks[0].geometry.width();
  Tensor4<float> t(static_cast<int>(stacks.size()), 3, h, w);
  for (std::size_t i = 0; i < stacks.size(); ++i) {
    const GrayImage* ch[3] = {&stacks[i].geometry, &stacks[i].dirichlet, &stacks[i].neumann};
    for (int c = 0; c < 3; ++c) {
      if (ch[c]->width() != w || ch[c]->height() != h) throw NnError("to_tensor: input images differ in size");
      std::copy(ch[c]->data().begin(), ch[c]->data().end(), t.sample(static_cast<int>(i)) + c * t.plane_size());
    }
  }
  return t;
}

Tensor4<float> to_tensor(std::span<const GrayImage> images) {
  if (images.empty()) throw NnError("to_tensor: empty batch");
  const int h = images[0].height(), w = images[0].width();
  Tensor4<float> t(static_cast<int>(images.size()), 1, h, w);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].width() != w || images[i].height() != h) throw NnError("to_tensor: images differ in size");
    std::copy(images[i].data().begin(), images[i].data().end(), t.sample(static_cast<int>(i)));
  }
  return t;
}

GrayImage to_image(const Tensor4<float>& t, int sample) {
  if (t.c != 1 || sample < 0 || sample >= t.n) throw NnError("to_image: expected a single-channel sample");
  GrayImage img(t.w, t.h);
  std::copy_n(t.sample(sample), t.sample_size(), img.data().begin());
  return img;
}

GrayImage unet_forward(UNet<float>& model, const InputStack& stack) {
  return to_image(model.forward(to_tensor(std::span<const InputStack>(&stack, 1)), false));
}

}  // namespace meshdens
