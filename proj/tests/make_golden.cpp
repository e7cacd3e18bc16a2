// Regenerates tests/data/golden. Only needed when the bitstream or
// checkpoint format changes on purpose.
#include <cstdio>
#include <fstream>

#include "golden.hpp"
#include "wdsc/train.hpp"

using namespace wdsc;

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: make_golden <output dir>\n");
    return 2;
  }
  const std::filesystem::path dir = argv[1];
  TrainConfig cfg;
  cfg.model.channels = 4;
  cfg.model.lambda = 256;
  cfg.lr = 1e-3;
  cfg.max_iters = 300;
  cfg.data.synth_count = 32;
  cfg.data.validation_pairs = 2;
  const auto result = train(cfg, load_train_data(cfg));
  write_file(dir / "model.wdck", result.checkpoint);
  const auto pair = synth_pairs(404, 1)[0];
  save_image(dir / "x.png", pair.left);
  save_image(dir / "y.png", pair.right);
  const auto model = deserialize<float>(result.checkpoint);
  const Tensor<float> x = load_image<float>(dir / "x.png"), y = load_image<float>(dir / "y.png");
  const auto bytes = pack(compress(model, x));
  write_file(dir / "x.wdsc", bytes);
  const Tensor<float> x_hat = decompress(model, unpack(bytes), y);
  save_image(dir / "x_hat.png", x_hat);
  std::ofstream(dir / "x_hat.fnv") << std::hex << testing::float_fingerprint(x_hat) << '\n';
  return 0;
}
