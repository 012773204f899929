from pathlib import Path

import pytest

from procova.design import TrialDesign, calibrated_effect_size

DATA_DIR = Path(__file__).parent / "data"

AD_SD = 3.5
AD_TOTAL_UNADJUSTED = 1000


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture(scope="session")
def ad_design() -> TrialDesign:
    """1:1 design calibrated so the unadjusted total is 1000 at 90% power."""
    return TrialDesign(
        alpha=0.05,
        target_power=0.90,
        effect_size=calibrated_effect_size(AD_TOTAL_UNADJUSTED, endpoint_sd=AD_SD),
        endpoint_sd=AD_SD,
        allocation_ratio=(1, 1),
        dropout_rate=0.0,
        assumed_vr=0.10,
        endpoint_label="CDR-SB",
    )
