// Folded serving encodes the user sequence once per request and reuses it for
// every candidate; only the target-conditioned blocks rerun. This program
// scores one request both ways, shows the scores agree, and prints the
// analytic cost table for a few batch sizes.
#include <cmath>
#include <cstdio>

#include "srp4ctr/config.hpp"
#include "srp4ctr/costmodel.hpp"
#include "srp4ctr/finetune.hpp"

using namespace srp4ctr;

int main() {
  LabConfig cfg;
  cfg.set("model.dim", "32");
  cfg.set("model.layers", "2");
  cfg.set("data.max_len", "20");

  const ModelConfig mcfg = model_from(cfg);
  const FinetuneConfig fin = finetune_model_from(cfg);

  ParameterStore<float> store;
  CtrModel<float> model = build_ctr_model(store, mcfg, fin, 11);

  const int batch = 8;
  const ServingRequest req = random_request(mcfg, batch, 99);
  const ServeResult folded = serve_folded(model, req);
  const ServeResult naive = serve_naive(model, req);

  double dev = 0.0;
  for (int i = 0; i < batch; ++i) {
    std::printf("candidate %d  folded %.6f  naive %.6f\n", i, folded.scores[i],
                naive.scores[i]);
    dev = std::max(dev, std::fabs(folded.scores[i] - naive.scores[i]));
  }
  std::printf("max deviation %.2e\n\n", dev);

  for (int b : {1, 10, 100}) {
    const CostReport report = count_flops(mcfg, fin, b);
    std::printf("%s\n", report.to_table().c_str());
  }
  return 0;
}
