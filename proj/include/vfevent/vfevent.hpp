#pragma once

#include "vfevent/checkpoint.hpp"
#include "vfevent/config.hpp"
#include "vfevent/core.hpp"
#include "vfevent/data.hpp"
#include "vfevent/encoders.hpp"
#include "vfevent/eval.hpp"
#include "vfevent/gradcheck.hpp"
#include "vfevent/image.hpp"
#include "vfevent/imaginator.hpp"
#include "vfevent/inference.hpp"
#include "vfevent/model.hpp"
#include "vfevent/schedule.hpp"
#include "vfevent/synthetic.hpp"
#include "vfevent/training.hpp"
