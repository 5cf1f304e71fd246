#pragma once

#include "ddsr/common.hpp"
#include "ddsr/random.hpp"
#include "ddsr/log.hpp"
#include "ddsr/corpus.hpp"
#include "ddsr/embedding.hpp"
#include "ddsr/nn.hpp"
#include "ddsr/tokenizer.hpp"
#include "ddsr/rqvae.hpp"
#include "ddsr/diffusion.hpp"
#include "ddsr/approximator.hpp"
#include "ddsr/inferencer.hpp"
#include "ddsr/evaluator.hpp"
#include "ddsr/trainer.hpp"
#include "ddsr/pipeline.hpp"
