from django.apps import AppConfig


class RetrievalConfig(AppConfig):
    name = 'retrieval'
    verbose_name = 'Retrieval and evaluation'
