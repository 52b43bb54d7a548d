// Copyright 2026 the mvsearch authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Train, index, search and verify on a small synthetic scene.

#include <iostream>

#include "mvs/mvs.hpp"

int main() {
  mvs::SyntheticSceneConfig scene_cfg;
  scene_cfg.n_images = 20;
  scene_cfg.features_per_image = 500;
  scene_cfg.n_queries = 3;
  scene_cfg.n_distractors = 1;
  scene_cfg.n_training_images = 20;
  scene_cfg.seed = 7;
  const auto scene = mvs::generate_synthetic(scene_cfg);

  std::vector<mvs::BinaryDescriptor> training;
  for (const auto& image : scene.training)
    for (const auto& f : image) training.push_back(f.descriptor);

  mvs::TrainingConfig train_cfg;
  train_cfg.n_words = 128;
  auto vocab = mvs::train(training, train_cfg);
  auto dict = mvs::build_dictionary(training, vocab, 64);
  const auto engine = mvs::index_images(std::move(vocab), std::move(dict), scene.references);

  mvs::PipelineConfig pipeline;
  pipeline.gv = mvs::GVConfig{};
  for (const auto& q : scene.queries) {
    const auto outcome = mvs::run_query(q.features, engine, pipeline);
    std::cout << (q.source_image ? "query of image " + std::to_string(*q.source_image) : std::string("distractor"))
              << ": ";
    if (outcome.any_accepted()) {
      const auto& best = outcome.reports.front();
      std::cout << "found image " << best.image_id << " with " << best.final_score << " inliers\n";
    } else {
      std::cout << "no match\n";
    }
  }
}
