#pragma once

#include "bertil/archive.hpp"
#include "bertil/autodiff.hpp"
#include "bertil/checkpoint.hpp"
#include "bertil/dataset.hpp"
#include "bertil/glove.hpp"
#include "bertil/gradcheck.hpp"
#include "bertil/interaction.hpp"
#include "bertil/metrics.hpp"
#include "bertil/model.hpp"
#include "bertil/optimizer.hpp"
#include "bertil/pipeline.hpp"
#include "bertil/polarity_head.hpp"
#include "bertil/synthetic.hpp"
#include "bertil/tensor.hpp"
#include "bertil/trainer.hpp"
