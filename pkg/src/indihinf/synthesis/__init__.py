"""Mixed-sensitivity synthesis: weights, generalized plant, full-order and
structured controllers, and the modal PD baseline."""
from .controllers import (AXES, KINDS, ControllerSet, ModalDesign, cascade, design_pd_modal,
                          lead_lag, pd_controller)
from .design import DesignError, DesignResult, channel_norms, design, loop_models
from .plant import (GeneralizedPlant, build_generalized_plant, double_integrator,
                    first_order_lag, second_order_filter)
from .riccati import FullOrderResult, SynthesisError, hinf_synthesis
from .structured import (Structure, StructuredResult, StructuredSynthesisError,
                         synth_structured)
from .weights import WeightError, WeightSet, make_tracking_weight, preset_weights

synth_full_order = hinf_synthesis
