import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from spkver.corpus import AudioBuffer

settings.register_profile("default", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tone(freq=1000.0, seconds=1.0, rate=16000, amp=0.5):
    t = np.arange(int(seconds * rate)) / rate
    return AudioBuffer(amp * np.sin(2 * np.pi * freq * t), rate)


@pytest.fixture
def speech_like():
    """Two seconds of synthetic voiced speech from the demo generator."""
    from spkver.pipeline.demo import speaker_voice, synthesize_utterance

    voice = speaker_voice(0, 3, 0, 1, "test")
    return AudioBuffer(synthesize_utterance(voice, 7, 2.0, 16000), 16000)
