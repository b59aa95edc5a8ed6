"""
Tests for WAV reading and writing
"""

import os

import numpy as np
import pytest
import soundfile as sf

from floss.utils.audio_io import AudioProcessor
from floss.utils.exceptions import AudioIOError
from tests.utils.test_helpers import audio_helper


class TestAudioProcessor:
    """Test WAV loading and saving"""

    def setup_method(self):
        """Set up test fixtures"""
        self.processor = AudioProcessor(16000)

    def test_load_pcm16(self, temp_dir):
        """Test loading a PCM16 file as float64"""
        tone = audio_helper.tone()
        path = audio_helper.write_wav(os.path.join(temp_dir, "tone.wav"), tone)
        loaded = self.processor.load_audio(path)
        assert loaded.dtype == np.float64
        assert loaded.shape == tone.shape
        assert np.max(np.abs(loaded - tone)) < 1e-4

    def test_float32_round_trip(self, temp_dir):
        """Test that float32 output keeps samples to float32 precision"""
        processor = AudioProcessor(16000, subtype="float32")
        signal = audio_helper.tone(amplitude=0.7)
        path = os.path.join(temp_dir, "out.wav")
        processor.save_audio(path, signal)
        loaded = processor.load_audio(path)
        assert np.max(np.abs(loaded - signal)) < 1e-6

    def test_pcm16_clips(self, temp_dir):
        """Test that PCM16 output is clipped to [-1, 1]"""
        path = os.path.join(temp_dir, "loud.wav")
        self.processor.save_audio(path, np.array([2.0, -3.0, 0.5]))
        loaded, _ = sf.read(path)
        assert np.max(np.abs(loaded)) <= 1.0

    def test_sample_rate_mismatch(self, temp_dir):
        """Test rejection of a file at another sample rate"""
        path = audio_helper.write_wav(os.path.join(temp_dir, "tone.wav"), audio_helper.tone(), sample_rate=8000)
        with pytest.raises(AudioIOError, match="Sample rate mismatch"):
            self.processor.load_audio(path)

    def test_stereo_rejected(self, temp_dir):
        """Test rejection of multi-channel audio"""
        path = os.path.join(temp_dir, "stereo.wav")
        sf.write(path, np.zeros((100, 2), dtype=np.float32), 16000)
        with pytest.raises(AudioIOError, match="mono"):
            self.processor.load_audio(path)

    def test_save_creates_directory(self, temp_dir):
        """Test that missing output directories are created"""
        path = os.path.join(temp_dir, "nested", "dir", "x.wav")
        self.processor.save_audio(path, np.zeros(16))
        assert os.path.exists(path)

    def test_save_rejects_2d(self, temp_dir):
        """Test rejection of a 2-D signal"""
        with pytest.raises(AudioIOError):
            self.processor.save_audio(os.path.join(temp_dir, "x.wav"), np.zeros((2, 16)))

    def test_unknown_subtype(self):
        """Test rejection of unsupported WAV subtypes"""
        with pytest.raises(AudioIOError):
            AudioProcessor(16000, subtype="mp3")
