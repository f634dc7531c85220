#pragma once

#include "xdnr/analysis.hpp"
#include "xdnr/corpus.hpp"
#include "xdnr/dense_index.hpp"
#include "xdnr/error.hpp"
#include "xdnr/lexical_index.hpp"
#include "xdnr/metrics.hpp"
#include "xdnr/pipeline.hpp"
#include "xdnr/projection_head.hpp"
#include "xdnr/ranked_list.hpp"
#include "xdnr/run_config.hpp"
#include "xdnr/trainer.hpp"
