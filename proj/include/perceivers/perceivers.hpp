#pragma once

#include "perceivers/analysis.hpp"
#include "perceivers/checkpoint.hpp"
#include "perceivers/config.hpp"
#include "perceivers/error.hpp"
#include "perceivers/evaluation.hpp"
#include "perceivers/file_io.hpp"
#include "perceivers/masking.hpp"
#include "perceivers/midi_io.hpp"
#include "perceivers/model.hpp"
#include "perceivers/pianoroll.hpp"
#include "perceivers/sampling.hpp"
#include "perceivers/segmentation.hpp"
#include "perceivers/token_io.hpp"
#include "perceivers/training.hpp"
