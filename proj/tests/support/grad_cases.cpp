#include "grad_cases.hpp"

#include "dmsr/model.hpp"
#include "dmsr/naf.hpp"
#include "dmsr/nn.hpp"
#include "dmsr/resample.hpp"
#include "dmsr/swin.hpp"
#include "dmsr/train.hpp"

#include <random>

namespace dmsr::testing {

using V = Var<double>;
using Vs = std::vector<V>;
using T = Tensor<double>;

ModelConfig tiny_config(Backbone backbone) {
  ModelConfig cfg = ModelConfig::defaults(backbone);
  cfg.blocks = 2;
  cfg.embed_dim = 8;
  cfg.window = 4;
  cfg.heads = 1;
  cfg.stls_per_block = 2;
  cfg.k = 3;
  cfg.scale = 4;
  return cfg;
}

namespace {

GradCase unary_case(const std::string& name, std::function<V(V)> f, double lo = -2, double hi = 2) {
  return {name, 1e-4, [=] {
            return check_gradients({random_tensor({3, 4}, 11, lo, hi)},
                                   [f](Tape<double>&, const Vs& in) { return f(in[0]); });
          }};
}

GradCase binary_case(const std::string& name, std::function<V(V, V)> f, bool bounded_b = false) {
  return {name, 1e-4, [=] {
            T b = random_tensor({1, 4}, 13, 0.5, 2.0);
            if (!bounded_b) b = random_tensor({1, 4}, 13);
            else
              for (Index i = 0; i < b.size(); ++i) b[i] *= (i % 2 ? -1.0 : 1.0);
            return check_gradients({random_tensor({3, 4}, 12), b},
                                   [f](Tape<double>&, const Vs& in) { return f(in[0], in[1]); });
          }};
}

// Parameters of a tiny model with every entry moved off its initial value so
// that zero-initialised branches carry gradient too.
ParamStore<double> perturbed_params(const ModelConfig& cfg, std::uint64_t seed) {
  auto params = model::init_params<double>(cfg, seed);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> noise(0.0, 0.2);
  for (const auto& n : params.names()) {
    auto& t = params.at(n);
    for (Index i = 0; i < t.size(); ++i) t[i] += noise(rng);
  }
  return params;
}

GradCase full_forward_case(Backbone backbone) {
  return {"dmsr_forward_" + to_string(backbone), 1e-3, [backbone] {
            const ModelConfig cfg = tiny_config(backbone);
            const auto params = perturbed_params(cfg, 5);
            const T guidance = random_tensor({1, 3, 16, 16}, 21, 0.0, 1.0);
            const T depth = random_tensor({1, 1, 4, 4}, 22, 0.0, 1.0);
            GradOptions opts;
            opts.samples_per_tensor = 6;
            // Bilinear sampling is piecewise linear; a smaller step keeps the
            // probes from straddling a lattice line of some sample position.
            opts.eps = 1e-5;
            return check_param_gradients(
                params,
                [&](Binding<double>& bind) {
                  auto& tape = bind.tape();
                  return model::dmsr_forward(bind, tape.constant(guidance), tape.constant(depth), cfg);
                },
                opts);
          }};
}

std::vector<GradCase> build_cases() {
  std::vector<GradCase> cases;
  // elementwise
  cases.push_back(binary_case("add", [](V a, V b) { return a + b; }));
  cases.push_back(binary_case("sub", [](V a, V b) { return a - b; }));
  cases.push_back(binary_case("mul", [](V a, V b) { return a * b; }));
  cases.push_back(binary_case("div", [](V a, V b) { return a / b; }, true));
  cases.push_back(unary_case("neg", [](V a) { return -a; }));
  cases.push_back(unary_case("tanh", [](V a) { return tanh(a); }));
  cases.push_back(unary_case("sigmoid", [](V a) { return sigmoid(a); }));
  cases.push_back(unary_case("sqrt", [](V a) { return sqrt(a); }, 0.3, 2.0));
  cases.push_back(unary_case("square", [](V a) { return square(a); }));
  cases.push_back(unary_case("abs", [](V a) { return abs(a); }));
  cases.push_back(unary_case("scale", [](V a) { return scale(a, 1.7); }));
  cases.push_back(unary_case("add_scalar", [](V a) { return add_scalar(a, 0.3); }));
  cases.push_back(unary_case("gelu_exact", [](V a) { return gelu(a, GeluMode::exact); }));
  cases.push_back(unary_case("gelu_tanh", [](V a) { return gelu(a, GeluMode::tanh_approx); }));
  cases.push_back(unary_case("softmax", [](V a) { return softmax(a); }));
  cases.push_back(unary_case("sum_axis", [](V a) { return sum_axis(a, 0, false); }));
  cases.push_back(unary_case("mean", [](V a) { return mean(a); }));
  cases.push_back(unary_case("permute", [](V a) { return permute(reshape(a, {3, 2, 2}), {2, 0, 1}); }));
  cases.push_back(unary_case("slice", [](V a) { return slice(a, 1, 1, 2); }));

  cases.push_back({"matmul", 1e-4, [] {
                     return check_gradients({random_tensor({2, 3, 4}, 31), random_tensor({2, 4, 5}, 32)},
                                            [](Tape<double>&, const Vs& in) { return matmul(in[0], in[1]); });
                   }});
  cases.push_back({"matmul_shared_rhs", 1e-4, [] {
                     return check_gradients({random_tensor({2, 3, 4}, 33), random_tensor({4, 5}, 34)},
                                            [](Tape<double>&, const Vs& in) { return matmul(in[0], in[1]); });
                   }});

  cases.push_back({"conv2d", 1e-4, [] {
                     return check_gradients(
                         {random_tensor({2, 3, 6, 6}, 41), random_tensor({4, 3, 3, 3}, 42), random_tensor({4}, 43)},
                         [](Tape<double>&, const Vs& in) {
                           return nn::conv2d(in[0], in[1], std::optional<V>(in[2]), {1, 1, 1});
                         });
                   }});
  cases.push_back({"conv2d_strided", 1e-4, [] {
                     return check_gradients({random_tensor({1, 2, 7, 7}, 44), random_tensor({3, 2, 3, 3}, 45)},
                                            [](Tape<double>&, const Vs& in) {
                                              return nn::conv2d(in[0], in[1], std::optional<V>(), {2, 0, 1});
                                            });
                   }});
  cases.push_back({"conv2d_depthwise", 1e-4, [] {
                     return check_gradients(
                         {random_tensor({1, 4, 5, 5}, 46), random_tensor({4, 1, 3, 3}, 47), random_tensor({4}, 48)},
                         [](Tape<double>&, const Vs& in) {
                           return nn::conv2d(in[0], in[1], std::optional<V>(in[2]), {1, 1, 4});
                         });
                   }});

  cases.push_back({"layer_norm", 1e-4, [] {
                     return check_gradients(
                         {random_tensor({3, 6}, 51), random_tensor({6}, 52), random_tensor({6}, 53)},
                         [](Tape<double>&, const Vs& in) { return nn::layer_norm(in[0], in[1], in[2]); });
                   }});

  auto attention = [](bool masked, bool rel_bias) {
    return [=] {
      const Index c = 8, heads = 2, w = 2, l = w * w;
      std::vector<T> inputs = {random_tensor({2, l, c}, 61, -1, 1), random_tensor({c, 3 * c}, 62, -0.5, 0.5),
                               random_tensor({3 * c}, 63, -0.5, 0.5), random_tensor({c, c}, 64, -0.5, 0.5),
                               random_tensor({c}, 65, -0.5, 0.5)};
      if (rel_bias) inputs.push_back(random_tensor({(2 * w - 1) * (2 * w - 1), heads}, 66, -0.5, 0.5));
      return check_gradients(inputs, [=](Tape<double>& tape, const Vs& in) {
        nn::AttentionParams<double> p;
        p.num_heads = heads;
        p.window = w;
        p.qkv_weight = in[1];
        p.qkv_bias = in[2];
        p.proj_weight = in[3];
        p.proj_bias = in[4];
        if (rel_bias) p.relative_bias_table = in[5];
        std::optional<V> mask;
        if (masked) {
          // Two windows of a 2x4 map shifted by one column.
          mask = tape.constant(nn::shifted_window_mask<double>(2, 4, w, 1));
        }
        return nn::multi_head_attention(in[0], p, mask);
      });
    };
  };
  cases.push_back({"attention", 1e-4, attention(false, false)});
  cases.push_back({"attention_masked", 1e-4, attention(true, false)});
  cases.push_back({"attention_relative_bias", 1e-4, attention(false, true)});

  cases.push_back({"window_partition_shift", 1e-4, [] {
                     return check_gradients({random_tensor({1, 4, 4, 3}, 71)}, [](Tape<double>&, const Vs& in) {
                       return nn::window_partition(nn::cyclic_shift(in[0], 1, 2), 2);
                     });
                   }});
  cases.push_back({"pixel_unshuffle", 1e-4, [] {
                     return check_gradients({random_tensor({1, 2, 4, 4}, 72)}, [](Tape<double>&, const Vs& in) {
                       return nn::pixel_unshuffle(in[0], 2);
                     });
                   }});
  cases.push_back({"pixel_shuffle", 1e-4, [] {
                     return check_gradients({random_tensor({1, 8, 2, 2}, 73)}, [](Tape<double>&, const Vs& in) {
                       return nn::pixel_shuffle(in[0], 2);
                     });
                   }});
  cases.push_back({"adaptive_avg_pool_global", 1e-4, [] {
                     return check_gradients({random_tensor({2, 3, 4, 5}, 74)}, [](Tape<double>&, const Vs& in) {
                       return nn::adaptive_avg_pool_global(in[0]);
                     });
                   }});
  cases.push_back({"bilinear_sample", 1e-4, [] {
                     // Coordinates in the interior and past the border.
                     return check_gradients({random_tensor({1, 2, 5, 6}, 75), random_tensor({1, 4, 3, 2}, 76, -1.3, 6.3)},
                                            [](Tape<double>&, const Vs& in) { return nn::bilinear_sample(in[0], in[1]); });
                   }});
  cases.push_back({"bicubic_resize", 1e-4, [] {
                     return check_gradients({random_tensor({1, 1, 4, 6}, 77)}, [](Tape<double>&, const Vs& in) {
                       return bicubic_resize(in[0], 8, 3);
                     });
                   }});

  cases.push_back({"simple_gate", 1e-4, [] {
                     return check_gradients({random_tensor({1, 4, 3, 3}, 81)},
                                            [](Tape<double>&, const Vs& in) { return naf::simple_gate(in[0]); });
                   }});
  cases.push_back({"sca", 1e-4, [] {
                     return check_gradients(
                         {random_tensor({2, 3, 4, 4}, 82), random_tensor({3, 3, 1, 1}, 83), random_tensor({3}, 84)},
                         [](Tape<double>&, const Vs& in) { return naf::sca(in[0], in[1], in[2]); });
                   }});

  cases.push_back({"combine_weights", 1e-4, [] {
                     return check_gradients({random_tensor({1, 16 * 9, 2, 2}, 91), random_tensor({1, 16 * 9, 2, 2}, 92)},
                                            [](Tape<double>&, const Vs& in) {
                                              return model::combine_weights(in[0], in[1], 3);
                                            });
                   }});
  cases.push_back({"combine_offsets", 1e-4, [] {
                     return check_gradients({random_tensor({1, 32 * 9, 2, 2}, 93), random_tensor({1, 32 * 9, 2, 2}, 94)},
                                            [](Tape<double>&, const Vs& in) {
                                              return model::combine_offsets(in[0], in[1], 3);
                                            });
                   }});
  cases.push_back({"apply_joint_filter", 1e-4, [] {
                     return check_gradients(
                         {random_tensor({1, 1, 6, 6}, 95, 0, 1), random_tensor({1, 9, 6, 6}, 96, -0.5, 1),
                          random_tensor({1, 18, 6, 6}, 97, -1.5, 1.5)},
                         [](Tape<double>&, const Vs& in) {
                           return model::apply_joint_filter(in[0], model::KernelField<double>{in[1], in[2]}, 3);
                         });
                   }});
  cases.push_back({"l1_loss", 1e-4, [] {
                     return check_gradients({random_tensor({2, 5}, 98), random_tensor({2, 5}, 99)},
                                            [](Tape<double>&, const Vs& in) { return train::l1_loss(in[0], in[1]); });
                   }});

  auto backbone_case = [](Backbone b) {
    return GradCase{to_string(b) + "_backbone", 1e-4, [b] {
                      ModelConfig cfg = tiny_config(b);
                      cfg.heads = 2;
                      ParamStore<double> params;
                      Initializer init(3);
                      if (b == Backbone::swin) swin::init_backbone(params, "bb", cfg, init);
                      else naf::init_backbone(params, "bb", cfg, init);
                      std::mt19937_64 rng(4);
                      std::normal_distribution<double> noise(0.0, 0.2);
                      for (const auto& n : params.names())
                        for (Index i = 0; i < params.at(n).size(); ++i) params.at(n)[i] += noise(rng);
                      const T x = random_tensor({1, 8, 8, 8}, 101, -1, 1);  // 8x8 map: shifted windows active
                      GradOptions opts;
                      opts.samples_per_tensor = 8;
                      return check_param_gradients(
                          params,
                          [&](Binding<double>& bind) {
                            auto in = bind.tape().constant(x);
                            return b == Backbone::swin ? swin::backbone_forward(bind, "bb", in, cfg)
                                                       : naf::backbone_forward(bind, "bb", in, cfg);
                          },
                          opts);
                    }};
  };
  cases.push_back(backbone_case(Backbone::swin));
  cases.push_back(backbone_case(Backbone::naf));
  cases.push_back(full_forward_case(Backbone::swin));
  cases.push_back(full_forward_case(Backbone::naf));
  return cases;
}

}  // namespace

const std::vector<GradCase>& gradient_cases() {
  static const std::vector<GradCase> cases = build_cases();
  return cases;
}

}  // namespace dmsr::testing
